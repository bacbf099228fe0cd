#include "affakt/error.hpp"
#include "affakt/model.hpp"

#include "byte_io.hpp"

#include <cmath>

namespace affakt {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

void write_network(ByteWriter& w, const DenseNetwork& net) {
  w.u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& layer : net.layers()) {
    w.u32(static_cast<std::uint32_t>(layer.out_dim()));
    w.u32(static_cast<std::uint32_t>(layer.in_dim()));
    w.u32(static_cast<std::uint32_t>(layer.activation));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.f64(layer.weight(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) w.f64(layer.bias(r));
  }
}

std::uint32_t read_size(ByteReader& r, const char* field, std::uint32_t limit = 1u << 20) {
  const std::size_t at = r.offset();
  const std::uint32_t v = r.u32(field);
  if (v == 0 || v > limit) r.fail(std::string("implausible ") + field + " " + std::to_string(v), at);
  return v;
}

DenseNetwork read_network(ByteReader& r) {
  const std::uint32_t count = read_size(r, "layer count", 64);
  std::vector<DenseLayer> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint32_t out = read_size(r, "layer output size");
    const std::uint32_t in = read_size(r, "layer input size");
    const std::size_t at = r.offset();
    const std::uint32_t act = r.u32("activation");
    if (act > static_cast<std::uint32_t>(Activation::kSoftmax)) r.fail("unknown activation tag", at);
    r.require(8 * (static_cast<std::size_t>(out) * in + out), "layer parameters");
    DenseLayer layer{Matrix(out, in), Vector(out), static_cast<Activation>(act)};
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = r.f64("weight");
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.f64("bias");
    layers.push_back(std::move(layer));
  }
  try {
    return DenseNetwork(std::move(layers));
  } catch (const Error& e) {
    r.fail(std::string("invalid network: ") + e.what(), r.offset());
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& cp) {
  ByteWriter w;
  w.raw("AFKT");
  w.u32(kCheckpointVersion);
  for (const DenseNetwork* net : {&cp.state.f1, &cp.state.f2, &cp.state.f3}) write_network(w, *net);

  const CorrelationPrototype& p = cp.state.proto;
  w.u32(static_cast<std::uint32_t>(p.target_classes()));
  w.u32(static_cast<std::uint32_t>(p.source_classes()));
  w.f64(p.alpha());
  w.f64(p.nu());
  w.u32(p.scale_mode() == ScaleMode::kRaw ? 1 : 0);
  w.u8(p.fixed_sigma() ? 1 : 0);
  w.f64(p.fixed_sigma().value_or(0.0));
  for (Eigen::Index l = 0; l < p.B().rows(); ++l)
    for (Eigen::Index k = 0; k < p.B().cols(); ++k) w.f64(p.B()(l, k));

  const std::string config = cp.config.to_text();
  w.u32(static_cast<std::uint32_t>(config.size()));
  w.raw(config);

  w.u32(static_cast<std::uint32_t>(cp.bank.num_classes()));
  w.u32(static_cast<std::uint32_t>(cp.bank.dim()));
  for (const auto& cls : cp.bank.classes()) {
    w.u32(static_cast<std::uint32_t>(cls.features.rows()));
    for (Eigen::Index i = 0; i < cls.features.rows(); ++i)
      for (Eigen::Index c = 0; c < cls.features.cols(); ++c) w.f64(cls.features(i, c));
    for (std::size_t i = 0; i < cls.importance.size(); ++i) w.f64(cls.importance[i]);
  }
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.raw(4, "magic") != "AFKT") r.fail("bad magic", 0);
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(v), 4);
  }
  ModelState state;
  state.f1 = read_network(r);
  state.f2 = read_network(r);
  state.f3 = read_network(r);

  const std::size_t proto_at = r.offset();
  const std::uint32_t lt = read_size(r, "target class count");
  const std::uint32_t ls = read_size(r, "source class count");
  const double alpha = r.f64("alpha");
  const double nu = r.f64("nu");
  const std::uint32_t mode = r.u32("scale mode");
  const bool has_fixed = r.u8("fixed sigma flag") != 0;
  const double fixed = r.f64("fixed sigma");
  nlohmann::json pj{{"alpha", alpha}, {"nu", nu}, {"L_t", lt}, {"L_s", ls},
                    {"scale_mode", mode == 1 ? "raw" : "normalized"}};
  pj["fixed_sigma"] = has_fixed ? nlohmann::json(fixed) : nlohmann::json(nullptr);
  nlohmann::json rows = nlohmann::json::array();
  r.require(8 * static_cast<std::size_t>(lt) * ls, "prototype rows");
  for (std::uint32_t l = 0; l < lt; ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (std::uint32_t k = 0; k < ls; ++k) row.push_back(r.f64("prototype entry"));
    rows.push_back(std::move(row));
  }
  pj["rows"] = std::move(rows);
  try {
    state.proto = CorrelationPrototype::from_json(pj);
  } catch (const Error& e) {
    r.fail(std::string("invalid prototype: ") + e.what(), proto_at);
  }

  const std::size_t config_at = r.offset();
  const std::uint32_t config_len = r.u32("config length");
  RunConfig config;
  try {
    config = RunConfig::parse(r.raw(config_len, "config text"));
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid embedded config: ") + e.what(), config_at);
  }

  const std::size_t bank_at = r.offset();
  const std::uint32_t classes = read_size(r, "bank class count");
  const std::uint32_t dim = read_size(r, "bank dimension");
  std::vector<Matrix> blocks;
  std::vector<DiscreteDistribution> importance;
  for (std::uint32_t k = 0; k < classes; ++k) {
    const std::uint32_t count = read_size(r, "bank class size");
    r.require(8 * (static_cast<std::size_t>(count) * dim + count), "bank class");
    Matrix block(count, dim);
    for (Eigen::Index i = 0; i < block.rows(); ++i)
      for (Eigen::Index c = 0; c < block.cols(); ++c) block(i, c) = r.f64("bank feature");
    Vector w(count);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = r.f64("bank importance");
    blocks.push_back(std::move(block));
    try {
      importance.emplace_back(std::move(w));
    } catch (const Error& e) {
      r.fail(std::string("invalid bank importance: ") + e.what(), bank_at);
    }
  }
  if (!r.done()) r.fail("trailing bytes", r.offset());

  try {
    Checkpoint cp{config, std::move(state), SourceClassBank(std::move(blocks), std::move(importance))};
    if (cp.state.f1.in_dim() != static_cast<Eigen::Index>(cp.bank.dim()) ||
        cp.state.proto.source_classes() != cp.bank.num_classes() ||
        cp.state.f3.out_dim() != static_cast<Eigen::Index>(cp.state.proto.target_classes())) {
      throw DimensionError("networks, prototype and bank disagree on sizes");
    }
    return cp;
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    r.fail(std::string("inconsistent checkpoint: ") + e.what(), bank_at);
  }
}

}  // namespace affakt
