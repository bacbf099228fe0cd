#include "affakt/data.hpp"

#include "affakt/error.hpp"

#include "byte_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

namespace affakt {

namespace {

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw InvariantError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw InvariantError("dataset is empty");
  if (features.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw DimensionError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (features.cols() < 1) throw InvariantError("dataset dimension must be positive");
  if (num_classes < 1) throw InvariantError("dataset needs at least one class");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw InvariantError("label " + std::to_string(labels[i]) + " at record " + std::to_string(i) +
                           " is outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  if (!features.allFinite()) throw InvariantError("dataset has non-finite features");
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(rows[r]));
    out.labels.push_back(labels.at(rows[r]));
  }
  return out;
}

std::vector<std::uint8_t> encode_embeddings(const Dataset& data) {
  data.validate();
  detail::ByteWriter w;
  w.bytes().reserve(kEmbeddingHeaderBytes + data.size() * (4 + 4 * data.dim()));
  w.raw("EMB1");
  w.u32(kEmbeddingVersion);
  w.u32(checked_u32(data.size(), "record count"));
  w.u32(checked_u32(data.dim(), "dimension"));
  w.u32(checked_u32(data.num_classes, "class count"));
  for (std::size_t i = 0; i < data.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(data.labels[i]));
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
      w.f32(static_cast<float>(data.features(static_cast<Eigen::Index>(i), c)));
    }
  }
  return std::move(w.bytes());
}

Dataset decode_embeddings(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, "embedding file");
  r.require(kEmbeddingHeaderBytes, "header");
  if (r.raw(4, "magic") != "EMB1") r.fail("bad magic", 0);
  if (const auto v = r.u32("version"); v != kEmbeddingVersion) r.fail("unsupported version " + std::to_string(v), 4);
  const std::uint32_t count = r.u32("count");
  const std::uint32_t dim = r.u32("dim");
  const std::uint32_t classes = r.u32("num_classes");
  if (count == 0) r.fail("record count must be positive", 8);
  if (dim == 0) r.fail("dimension must be positive", 12);
  if (classes == 0) r.fail("class count must be positive", 16);

  const std::size_t record = 4 + 4 * static_cast<std::size_t>(dim);
  const std::size_t expected = kEmbeddingHeaderBytes + static_cast<std::size_t>(count) * record;
  if (bytes.size() < expected) {
    const std::size_t complete = (bytes.size() - kEmbeddingHeaderBytes) / record;
    r.fail("truncated after " + std::to_string(complete) + " of " + std::to_string(count) + " records",
           kEmbeddingHeaderBytes + complete * record);
  }
  if (bytes.size() > expected) r.fail("trailing bytes", expected);

  Dataset data;
  data.num_classes = classes;
  data.features.resize(count, dim);
  data.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t label_at = r.offset();
    const std::uint32_t label = r.u32("label");
    if (label >= classes) {
      r.fail("label " + std::to_string(label) + " >= class count " + std::to_string(classes), label_at);
    }
    data.labels[i] = static_cast<int>(label);
    for (std::uint32_t c = 0; c < dim; ++c) {
      const std::size_t at = r.offset();
      const float f = r.f32("feature");
      if (!std::isfinite(f)) r.fail("non-finite feature", at);
      data.features(i, c) = static_cast<double>(f);
    }
  }
  return data;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void save_embeddings(const std::string& path, const Dataset& data) { write_file(path, encode_embeddings(data)); }

Dataset load_embeddings(const std::string& path) { return decode_embeddings(read_file(path)); }

std::vector<Matrix> class_blocks(const Dataset& data) {
  std::vector<std::vector<std::size_t>> rows(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) rows[static_cast<std::size_t>(data.labels[i])].push_back(i);
  std::vector<Matrix> blocks;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].empty()) throw InvariantError("source class " + std::to_string(k) + " has no samples");
    blocks.push_back(data.subset(rows[k]).features);
  }
  return blocks;
}

Matrix SyntheticSpec::one_hot_mixing(const std::vector<std::size_t>& planted, std::size_t source_classes) {
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(planted.size()), static_cast<Eigen::Index>(source_classes));
  for (std::size_t l = 0; l < planted.size(); ++l) {
    if (planted[l] >= source_classes) throw InvariantError("planted class out of range");
    w(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(planted[l])) = 1.0;
  }
  return w;
}

void SyntheticSpec::validate() const {
  if (source_classes < 1 || target_classes < 1 || dim < 1) throw InvariantError("spec: class counts and dim must be positive");
  if (source_per_class < 1 || target_count < target_classes) throw InvariantError("spec: sample counts too small");
  if (mixing.rows() != static_cast<Eigen::Index>(target_classes) ||
      mixing.cols() != static_cast<Eigen::Index>(source_classes)) {
    throw DimensionError("spec: mixing matrix must be target_classes x source_classes");
  }
  for (Eigen::Index l = 0; l < mixing.rows(); ++l) {
    if (mixing.row(l).minCoeff() < 0.0 || std::abs(mixing.row(l).sum() - 1.0) > 1e-9) {
      throw InvariantError("spec: mixing row " + std::to_string(l) + " is not on the simplex");
    }
  }
  if (!(noise_sigma >= 0.0)) throw InvariantError("spec: noise_sigma must be >= 0");
  if (!(min_separation >= 0.0)) throw InvariantError("spec: min_separation must be >= 0");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw InvariantError("spec: test_fraction must lie in [0, 1)");
}

nlohmann::json SyntheticSpec::to_json() const {
  nlohmann::json w = nlohmann::json::array();
  for (Eigen::Index l = 0; l < mixing.rows(); ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < mixing.cols(); ++k) row.push_back(mixing(l, k));
    w.push_back(row);
  }
  return {{"source_classes", source_classes}, {"target_classes", target_classes},
          {"dim", dim},                       {"source_per_class", source_per_class},
          {"target_count", target_count},     {"mixing", w},
          {"noise_sigma", noise_sigma},       {"min_separation", min_separation},
          {"test_fraction", test_fraction},   {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"source_classes", "target_classes", "dim",
                                                 "source_per_class", "target_count", "mixing",
                                                 "planted", "noise_sigma", "min_separation",
                                                 "test_fraction", "seed"};
  SyntheticSpec s;
  try {
    for (const auto& item : j.items()) {
      if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
        throw ConfigError("spec: unknown key '" + item.key() + "'");
      }
    }
    s.source_classes = j.value("source_classes", s.source_classes);
    s.target_classes = j.value("target_classes", s.target_classes);
    s.dim = j.value("dim", s.dim);
    s.source_per_class = j.value("source_per_class", s.source_per_class);
    s.target_count = j.value("target_count", s.target_count);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.min_separation = j.value("min_separation", s.min_separation);
    s.test_fraction = j.value("test_fraction", s.test_fraction);
    s.seed = j.value("seed", s.seed);
    if (j.contains("mixing") && j.contains("planted")) throw ConfigError("spec: give either mixing or planted");
    if (j.contains("mixing")) {
      const auto& w = j.at("mixing");
      s.mixing = Matrix::Zero(static_cast<Eigen::Index>(w.size()),
                              w.empty() ? 0 : static_cast<Eigen::Index>(w[0].size()));
      for (std::size_t l = 0; l < w.size(); ++l) {
        if (w[l].size() != static_cast<std::size_t>(s.mixing.cols())) throw ConfigError("spec: ragged mixing matrix");
        for (std::size_t k = 0; k < w[l].size(); ++k)
          s.mixing(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) = w[l][k].get<double>();
      }
    } else {
      const auto planted = j.value("planted", std::vector<std::size_t>{0, 1});
      s.mixing = one_hot_mixing(planted, s.source_classes);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("spec: ") + e.what());
  }
  s.validate();
  return s;
}

SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(spec.dim);
  const auto ls = static_cast<Eigen::Index>(spec.source_classes);

  constexpr int kMaxDraws = 10000;
  Matrix means(ls, d);
  int draws = 0;
  for (Eigen::Index k = 0; k < ls;) {
    if (++draws > kMaxDraws) {
      throw InvariantError("generate: could not place " + std::to_string(ls) + " unit means " +
                           std::to_string(spec.min_separation) + " apart; increase dim");
    }
    Eigen::RowVectorXd m(d);
    for (Eigen::Index c = 0; c < d; ++c) m(c) = normal(rng);
    const double norm = m.norm();
    if (norm == 0.0) continue;
    m /= norm;
    bool ok = true;
    for (Eigen::Index j = 0; j < k && ok; ++j) ok = (means.row(j) - m).norm() >= spec.min_separation;
    if (!ok) continue;
    means.row(k++) = m;
  }

  auto sample = [&](const Eigen::RowVectorXd& center) {
    Eigen::RowVectorXd x(d);
    for (Eigen::Index c = 0; c < d; ++c) x(c) = center(c) + spec.noise_sigma * normal(rng);
    return x;
  };

  SyntheticData out;
  out.source_means = means;
  out.source.num_classes = spec.source_classes;
  out.source.features.resize(ls * static_cast<Eigen::Index>(spec.source_per_class), d);
  Eigen::Index row = 0;
  for (Eigen::Index k = 0; k < ls; ++k) {
    for (std::size_t s = 0; s < spec.source_per_class; ++s) {
      out.source.features.row(row++) = sample(means.row(k));
      out.source.labels.push_back(static_cast<int>(k));
    }
  }

  const Matrix target_means = spec.mixing * means;
  Dataset targets;
  targets.num_classes = spec.target_classes;
  targets.features.resize(static_cast<Eigen::Index>(spec.target_count), d);
  std::vector<std::vector<std::size_t>> per_class(spec.target_classes);
  for (std::size_t i = 0; i < spec.target_count; ++i) {
    const std::size_t l = i * spec.target_classes / spec.target_count;  // balanced, contiguous
    targets.features.row(static_cast<Eigen::Index>(i)) = sample(target_means.row(static_cast<Eigen::Index>(l)));
    targets.labels.push_back(static_cast<int>(l));
    per_class[l].push_back(i);
  }

  std::vector<std::size_t> train_rows, test_rows;
  for (auto& rows : per_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(rows.size())));
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::shuffle(train_rows.begin(), train_rows.end(), rng);
  std::shuffle(test_rows.begin(), test_rows.end(), rng);
  out.target_train = targets.subset(train_rows);
  out.target_test = targets.subset(test_rows);

  // Round through float32 so in-memory data equals what the files hold.
  for (Dataset* ds : {&out.source, &out.target_train, &out.target_test}) {
    ds->features = ds->features.cast<float>().cast<double>();
  }
  return out;
}

}  // namespace affakt
