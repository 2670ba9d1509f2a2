#include "feddrift/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

#include "feddrift/errors.hpp"
#include "feddrift/rng.hpp"

namespace feddrift::dataset {

namespace {

constexpr std::uint32_t kImageMagic = 2051;  // 0x00000803
constexpr std::uint32_t kLabelMagic = 2049;  // 0x00000801

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("IDX file truncated while reading " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

float byte_to_pixel(unsigned char b) { return static_cast<float>(b) / 255.0f; }

unsigned char pixel_to_byte(float p) {
  long v = std::lround(static_cast<double>(p) * 255.0);
  return static_cast<unsigned char>(std::clamp(v, 0L, 255L));
}

// Template geometry. Each digit owns a 2x24 pixel band; the ten bands are
// disjoint, so samples of different digits are always linearly separable
// and weight traffic on one digit's band never touches another digit's
// inputs.
//
// A small fraction of each digit's samples carry the opposite class label.
// A flipped sample is drawn from the same pixel law as its correct
// counterparts, so no linear form can satisfy both and the two populations
// trade gradient on the band forever, holding the band's margin near
// log((1 - f) / f) instead of saturating. Because every node that holds a
// digit holds its flips in the same proportion, the opposing forces meet
// inside each node's own epochs, which keeps every node's update stream
// carrying a stable level of traffic for the drift-free statistics to
// calibrate against without coupling nodes through shared pixels.
//
// Class-1 digits flip far more often than class-0 digits. Their pinned
// margin then sits near the level it re-equilibrates to when part of a
// digit's supply changes label, so nodes that merely hold that digit see
// almost no change in their own update traffic while the fraction is fought
// over. The near-silent class-0 bands also keep every node's top principal
// components on the class-1 bands, the only places concept drift can land.
double flip_fraction(int digit) { return digit < 6 ? 0.002 : 0.14; }

// Class-1 bands are bright. A bright band couples strongly to the learning
// rate, so each local epoch re-anneals its margin almost from scratch and
// the update a node sends depends heavily on late-batch composition. That
// keeps every node's round-to-round update noise fat relative to the small
// coherent shifts that one node's drift induces on everyone else through
// the shared model.
float template_intensity(int digit) {
  if (digit < 6) return 0.50f + 0.02f * static_cast<float>(digit);
  return 0.78f + 0.04f * static_cast<float>(digit - 6);
}

bool in_template_block(int digit, int row, int col) {
  int r0 = 2 + 2 * digit;
  return row >= r0 && row <= r0 + 1 && col >= 2 && col <= 25;
}

}  // namespace

ConceptMap ConceptMap::normal() {
  ConceptMap m;
  for (int d = 0; d < kDigitCount; ++d) m.assignment_[d] = d <= 5 ? 0 : 1;
  return m;
}

std::uint8_t ConceptMap::class_of(int digit) const {
  if (digit < 0 || digit >= kDigitCount) throw DomainError("digit out of range");
  return assignment_[digit];
}

void ConceptMap::assign(int digit, std::uint8_t class_label) {
  if (digit < 0 || digit >= kDigitCount) throw DomainError("digit out of range");
  if (class_label > 1) throw DomainError("class label must be 0 or 1");
  assignment_[digit] = class_label;
}

std::vector<int> ConceptMap::digits_with_class(std::uint8_t class_label) const {
  std::vector<int> digits;
  for (int d = 0; d < kDigitCount; ++d) {
    if (assignment_[d] == class_label) digits.push_back(d);
  }
  return digits;
}

std::vector<DigitSample> load_idx(const std::filesystem::path& images_path,
                                  const std::filesystem::path& labels_path) {
  auto images = open_input(images_path);
  auto labels = open_input(labels_path);

  std::uint32_t image_magic = read_u32_be(images, "image magic");
  if (image_magic != kImageMagic) {
    throw FormatError("bad image magic " + std::to_string(image_magic) + " in " +
                      images_path.string());
  }
  std::uint32_t image_count = read_u32_be(images, "image count");
  std::uint32_t rows = read_u32_be(images, "rows");
  std::uint32_t cols = read_u32_be(images, "cols");
  if (rows != kImageSide || cols != kImageSide) {
    throw FormatError("expected 28x28 images, got " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }

  std::uint32_t label_magic = read_u32_be(labels, "label magic");
  if (label_magic != kLabelMagic) {
    throw FormatError("bad label magic " + std::to_string(label_magic) + " in " +
                      labels_path.string());
  }
  std::uint32_t label_count = read_u32_be(labels, "label count");
  if (image_count != label_count) {
    throw ConsistencyError("image count " + std::to_string(image_count) +
                           " != label count " + std::to_string(label_count));
  }

  const ConceptMap concept_map = ConceptMap::normal();
  std::vector<DigitSample> samples(image_count);
  std::vector<unsigned char> buf(kPixelCount);
  for (std::uint32_t i = 0; i < image_count; ++i) {
    if (!images.read(reinterpret_cast<char*>(buf.data()), kPixelCount)) {
      throw FormatError("IDX image file truncated at record " + std::to_string(i));
    }
    unsigned char label = 0;
    if (!labels.read(reinterpret_cast<char*>(&label), 1)) {
      throw FormatError("IDX label file truncated at record " + std::to_string(i));
    }
    if (label > 9) {
      throw FormatError("label " + std::to_string(int(label)) + " out of range at record " +
                        std::to_string(i));
    }
    DigitSample& s = samples[i];
    for (int p = 0; p < kPixelCount; ++p) s.pixels[p] = byte_to_pixel(buf[p]);
    s.digit = label;
    s.class_label = concept_map.class_of(label);
  }
  return samples;
}

void save_idx(std::span<const DigitSample> samples,
              const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  std::ofstream images(images_path, std::ios::binary);
  if (!images) throw IoError("cannot open " + images_path.string() + " for writing");
  std::ofstream labels(labels_path, std::ios::binary);
  if (!labels) throw IoError("cannot open " + labels_path.string() + " for writing");

  auto count = static_cast<std::uint32_t>(samples.size());
  write_u32_be(images, kImageMagic);
  write_u32_be(images, count);
  write_u32_be(images, kImageSide);
  write_u32_be(images, kImageSide);
  write_u32_be(labels, kLabelMagic);
  write_u32_be(labels, count);

  std::vector<unsigned char> buf(kPixelCount);
  for (const auto& s : samples) {
    for (int p = 0; p < kPixelCount; ++p) buf[p] = pixel_to_byte(s.pixels[p]);
    images.write(reinterpret_cast<const char*>(buf.data()), kPixelCount);
    unsigned char label = s.digit;
    labels.write(reinterpret_cast<const char*>(&label), 1);
  }
  if (!images || !labels) throw IoError("short write while saving IDX pair");
}

std::vector<DigitSample> generate_synthetic(int n_per_digit, std::uint64_t seed) {
  if (n_per_digit < 1) throw DomainError("n_per_digit must be >= 1");

  const ConceptMap concept_map = ConceptMap::normal();
  auto g = rng::engine(seed);
  std::vector<DigitSample> samples;
  samples.reserve(static_cast<std::size_t>(n_per_digit) * kDigitCount);

  for (int digit = 0; digit < kDigitCount; ++digit) {
    const float base = template_intensity(digit);
    for (int i = 0; i < n_per_digit; ++i) {
      DigitSample s;
      s.digit = static_cast<std::uint8_t>(digit);
      s.flipped = rng::uniform_unit(g) < flip_fraction(digit);
      const std::uint8_t mapped = concept_map.class_of(digit);
      s.class_label = s.flipped ? static_cast<std::uint8_t>(1 - mapped) : mapped;
      for (int row = 0; row < kImageSide; ++row) {
        for (int col = 0; col < kImageSide; ++col) {
          float v = 0.0f;
          if (in_template_block(digit, row, col)) v = base;
          // Noise perturbs the template's lit pixels only; the background
          // stays exactly zero so gradients cannot leak onto pixels a
          // sample never draws.
          if (v > 0.0f) v += static_cast<float>(0.1 * rng::uniform_unit(g));
          // Quantize to the byte grid so IDX round trips are exact.
          s.pixels[row * kImageSide + col] = byte_to_pixel(pixel_to_byte(v));
        }
      }
      samples.push_back(s);
    }
  }
  return samples;
}

PartitionSet partition_by_counts(std::vector<DigitSample> pool,
                                 std::span<const std::array<int, kDigitCount>> counts,
                                 std::uint64_t seed) {
  // Index the pool by digit and shuffle each bucket once; nodes then consume
  // from bucket cursors, which keeps draws disjoint and replacement-free.
  std::array<std::vector<std::size_t>, kDigitCount> by_digit;
  for (std::size_t i = 0; i < pool.size(); ++i) by_digit[pool[i].digit].push_back(i);

  auto g = rng::engine(seed);
  for (auto& bucket : by_digit) rng::shuffle(bucket, g);

  std::array<std::size_t, kDigitCount> cursor{};
  std::vector<bool> used(pool.size(), false);

  PartitionSet out;
  out.nodes.reserve(counts.size());
  for (std::size_t n = 0; n < counts.size(); ++n) {
    NodePartition part;
    part.node_id = static_cast<int>(n);
    int total = 0;
    for (int d = 0; d < kDigitCount; ++d) total += counts[n][d];
    part.samples.reserve(total);
    for (int d = 0; d < kDigitCount; ++d) {
      int want = counts[n][d];
      if (want < 0) throw DomainError("negative sample count requested");
      if (cursor[d] + static_cast<std::size_t>(want) > by_digit[d].size()) {
        throw CapacityError("pool has too few samples of digit " + std::to_string(d) +
                            ": need " + std::to_string(want) + " more, have " +
                            std::to_string(by_digit[d].size() - cursor[d]));
      }
      for (int k = 0; k < want; ++k) {
        std::size_t idx = by_digit[d][cursor[d]++];
        part.samples.push_back(pool[idx]);
        used[idx] = true;
      }
      part.per_digit_counts[d] = want;
    }
    out.nodes.push_back(std::move(part));
  }

  out.leftover.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!used[i]) out.leftover.push_back(std::move(pool[i]));
  }
  return out;
}

PartitionSet partition_by_label_counts(
    std::vector<DigitSample> pool,
    std::span<const std::array<int, kDigitCount * 2>> counts,
    const ConceptMap& concept_map, std::uint64_t seed) {
  // Same cursor scheme as partition_by_counts, with each digit bucket split
  // by whether the sample's label agrees with the concept map.
  constexpr int kStrata = kDigitCount * 2;
  std::array<std::vector<std::size_t>, kStrata> by_stratum;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const int d = pool[i].digit;
    const int m = pool[i].class_label == concept_map.class_of(d) ? 0 : 1;
    by_stratum[2 * d + m].push_back(i);
  }

  auto g = rng::engine(seed);
  for (auto& bucket : by_stratum) rng::shuffle(bucket, g);

  std::array<std::size_t, kStrata> cursor{};
  std::vector<bool> used(pool.size(), false);

  PartitionSet out;
  out.nodes.reserve(counts.size());
  for (std::size_t n = 0; n < counts.size(); ++n) {
    NodePartition part;
    part.node_id = static_cast<int>(n);
    int total = 0;
    for (int c : counts[n]) total += c;
    part.samples.reserve(total);
    for (int s = 0; s < kStrata; ++s) {
      int want = counts[n][s];
      if (want < 0) throw DomainError("negative sample count requested");
      if (cursor[s] + static_cast<std::size_t>(want) > by_stratum[s].size()) {
        throw CapacityError(
            "pool has too few digit-" + std::to_string(s / 2) +
            (s % 2 ? " flipped-label" : " normal-label") + " samples: need " +
            std::to_string(want) + " more, have " +
            std::to_string(by_stratum[s].size() - cursor[s]));
      }
      for (int k = 0; k < want; ++k) {
        std::size_t idx = by_stratum[s][cursor[s]++];
        part.samples.push_back(pool[idx]);
        used[idx] = true;
      }
      part.per_digit_counts[s / 2] += want;
    }
    out.nodes.push_back(std::move(part));
  }

  out.leftover.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!used[i]) out.leftover.push_back(std::move(pool[i]));
  }
  return out;
}

PartitionSet partition_single_digit(std::vector<DigitSample> pool, int n_nodes,
                                    int samples_per_node, std::uint64_t seed) {
  if (n_nodes < 1 || n_nodes > kDigitCount) {
    throw DomainError("single-digit partitioning supports 1..10 nodes");
  }
  if (samples_per_node < 1) throw DomainError("samples_per_node must be >= 1");

  std::vector<std::array<int, kDigitCount>> counts(n_nodes);
  for (int n = 0; n < n_nodes; ++n) counts[n][n] = samples_per_node;
  return partition_by_counts(std::move(pool), counts, seed);
}

PartitionSet partition_random_mix(std::vector<DigitSample> pool, int n_nodes,
                                  int min_per_digit, int max_per_digit,
                                  std::uint64_t seed) {
  if (n_nodes < 1) throw DomainError("n_nodes must be >= 1");
  if (min_per_digit < 0 || min_per_digit > max_per_digit) {
    throw DomainError("need 0 <= min_per_digit <= max_per_digit");
  }

  // One stream drives both the count draws and the bucket shuffles.
  auto g = rng::engine(rng::mix(seed, 0xC0u));
  std::vector<std::array<int, kDigitCount>> counts(n_nodes);
  for (int n = 0; n < n_nodes; ++n) {
    for (int d = 0; d < kDigitCount; ++d) {
      counts[n][d] = rng::uniform_int(g, min_per_digit, max_per_digit);
    }
  }
  return partition_by_counts(std::move(pool), counts, rng::mix(seed, 0xC1u));
}

DriftInjection inject_drift(const ConceptMap& concept_map, std::uint64_t seed) {
  auto candidates = concept_map.digits_with_class(1);
  if (candidates.empty()) {
    throw ConceptError("no digit maps to class 2; nothing can drift");
  }
  auto g = rng::engine(seed);
  int digit = candidates[rng::uniform_below(g, candidates.size())];
  return force_drift(concept_map, digit);
}

DriftInjection force_drift(const ConceptMap& concept_map, int digit) {
  if (digit < 0 || digit >= kDigitCount) throw DomainError("digit out of range");
  if (concept_map.class_of(digit) != 1) {
    throw ConceptError("digit " + std::to_string(digit) + " does not map to class 2");
  }
  DriftInjection out{concept_map, digit};
  out.concept_map.assign(digit, 0);
  return out;
}

std::vector<DigitSample> relabel(std::vector<DigitSample> samples, const ConceptMap& concept_map) {
  for (auto& s : samples) {
    const std::uint8_t mapped = concept_map.class_of(s.digit);
    s.class_label = s.flipped ? static_cast<std::uint8_t>(1 - mapped) : mapped;
  }
  return samples;
}

}  // namespace feddrift::dataset
