#pragma once

// EMB1 embedding files, labeled datasets and the synthetic generator.
//
// EMB1 layout (little-endian):
//   "EMB1" | u32 version | u32 count | u32 dim | u32 num_classes
//   count x (u32 label | dim x f32)

#include "affakt/hot.hpp"
#include "affakt/ot_core.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace affakt {

inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 20;

struct Dataset {
  Matrix features;  // count x dim, float64 in memory
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features.cols()); }
  /// Throws InvariantError on empty data, label range or shape problems.
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

std::vector<std::uint8_t> encode_embeddings(const Dataset& data);
/// Throws FormatError with the byte offset of the first bad field.
Dataset decode_embeddings(const std::vector<std::uint8_t>& bytes);

void save_embeddings(const std::string& path, const Dataset& data);
Dataset load_embeddings(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);

/// Records grouped by label, keeping file order within each class.
std::vector<Matrix> class_blocks(const Dataset& data);

struct SyntheticSpec {
  std::size_t source_classes = 7;
  std::size_t target_classes = 2;
  std::size_t dim = 32;
  std::size_t source_per_class = 200;
  std::size_t target_count = 400;
  /// target_classes x source_classes, rows on the simplex.
  Matrix mixing;
  double noise_sigma = 0.3;
  double min_separation = 0.5;
  double test_fraction = 0.2;
  std::uint64_t seed = 7;

  /// Mixing rows one-hot on source classes `planted[l]`.
  static Matrix one_hot_mixing(const std::vector<std::size_t>& planted, std::size_t source_classes);

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticData {
  Dataset source;
  Dataset target_train;
  Dataset target_test;
  Matrix source_means;
};

/// Source class k ~ N(mean_k, sigma^2 I) with random unit means at pairwise
/// distance >= min_separation; target class l ~ N(sum_k W_lk mean_k, sigma^2 I).
/// Targets are split per class (stratified) into train and test.
SyntheticData generate(const SyntheticSpec& spec);

}  // namespace affakt
