#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace feddrift::dataset {

inline constexpr int kImageSide = 28;
inline constexpr int kPixelCount = kImageSide * kImageSide;
inline constexpr int kDigitCount = 10;

/// One 28x28 grayscale image. class_label is the binary task label derived
/// from the digit through the concept map in effect when the sample was made.
/// flipped marks label noise: the sample carries the opposite of its digit's
/// mapped class. The flag travels with the sample through relabeling but is
/// not representable in IDX files.
struct DigitSample {
  std::array<float, kPixelCount> pixels{};  // each value in [0, 1]
  std::uint8_t digit = 0;                   // 0..9
  std::uint8_t class_label = 0;             // 0 or 1
  bool flipped = false;
};

/// Total mapping digit -> binary class label.
class ConceptMap {
 public:
  /// Baseline concept: digits 0..5 map to label 0, digits 6..9 to label 1.
  static ConceptMap normal();

  std::uint8_t class_of(int digit) const;
  void assign(int digit, std::uint8_t class_label);
  std::vector<int> digits_with_class(std::uint8_t class_label) const;

  bool operator==(const ConceptMap&) const = default;

 private:
  std::array<std::uint8_t, kDigitCount> assignment_{};
};

struct NodePartition {
  int node_id = 0;
  std::vector<DigitSample> samples;
  std::array<int, kDigitCount> per_digit_counts{};
};

/// Partition output plus the unused remainder of the pool. Draws are without
/// replacement, so successive partitions of the leftover stay disjoint.
struct PartitionSet {
  std::vector<NodePartition> nodes;
  std::vector<DigitSample> leftover;
};

/// Reads an IDX image/label file pair. Pixel bytes are scaled by 1/255 and
/// class labels come from ConceptMap::normal().
std::vector<DigitSample> load_idx(const std::filesystem::path& images_path,
                                  const std::filesystem::path& labels_path);

/// Writes samples in the same IDX byte layout load_idx reads.
void save_idx(std::span<const DigitSample> samples,
              const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path);

/// Generates 10 * n_per_digit samples from fixed per-digit pixel templates
/// plus seeded uniform noise, quantized to the byte grid so an IDX round trip
/// is lossless (pixels and digit; class_label is re-derived on load). Digits
/// occupy disjoint pixel blocks, and a small fraction of each digit's samples
/// carry the opposite class label so the two classes are never linearly
/// separable. Output is digit-major: all digit-0 samples first.
std::vector<DigitSample> generate_synthetic(int n_per_digit, std::uint64_t seed);

/// Node i receives samples_per_node samples, all of digit i.
PartitionSet partition_single_digit(std::vector<DigitSample> pool, int n_nodes,
                                    int samples_per_node, std::uint64_t seed);

/// For each node and digit, draws a count uniformly from
/// [min_per_digit, max_per_digit] and assigns that many samples.
PartitionSet partition_random_mix(std::vector<DigitSample> pool, int n_nodes,
                                  int min_per_digit, int max_per_digit,
                                  std::uint64_t seed);

/// Assigns exactly counts[node][digit] samples to each node.
PartitionSet partition_by_counts(std::vector<DigitSample> pool,
                                 std::span<const std::array<int, kDigitCount>> counts,
                                 std::uint64_t seed);

/// Assigns exactly counts[node][2 * digit + m] samples of each digit, where
/// m = 0 draws samples whose class label agrees with the concept map and
/// m = 1 draws samples whose label disagrees. Lets one partition mirror
/// another's label-noise composition as well as its digit mix.
PartitionSet partition_by_label_counts(
    std::vector<DigitSample> pool,
    std::span<const std::array<int, kDigitCount * 2>> counts,
    const ConceptMap& concept_map, std::uint64_t seed);

struct DriftInjection {
  ConceptMap concept_map;
  int drifted_digit = -1;
};

/// Picks one digit uniformly among those mapped to label 1 and remaps it to
/// label 0. The returned map differs from the input in exactly that digit.
DriftInjection inject_drift(const ConceptMap& concept_map, std::uint64_t seed);

/// Same remap with the digit chosen by the caller.
DriftInjection force_drift(const ConceptMap& concept_map, int digit);

/// Recomputes every class_label from the given concept, keeping each sample's
/// label-noise flip: a flipped sample gets the opposite of its digit's mapped
/// class. Pixels, digits, and flags are untouched. Idempotent.
std::vector<DigitSample> relabel(std::vector<DigitSample> samples, const ConceptMap& concept_map);

}  // namespace feddrift::dataset
