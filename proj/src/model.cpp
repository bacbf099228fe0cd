#include "affakt/model.hpp"

#include "affakt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace affakt {

ModelState ModelState::initial(const RunConfig& config, std::size_t dim, std::size_t target_classes,
                               std::size_t source_classes, std::mt19937_64& rng) {
  config.validate();
  const auto d = static_cast<Eigen::Index>(dim);
  const auto h = static_cast<Eigen::Index>(config.hidden);
  // Identity init needs hidden >= 2 * dim; smaller widths fall back to random.
  ModelState s{DenseNetwork::mlp({d, h, d}, Activation::kIdentity, config.init, config.init_noise, rng),
               config.f2_identity
                   ? DenseNetwork::identity(d)
                   : DenseNetwork::mlp({d, h, d}, Activation::kIdentity, config.init, config.init_noise, rng),
               DenseNetwork::mlp({d, static_cast<Eigen::Index>(target_classes)}, Activation::kSoftmax,
                                 InitScheme::kRandom, 0.0, rng),
               CorrelationPrototype(target_classes, source_classes, config.alpha, config.nu, config.scale_mode)};
  if (config.sigma_mode == SigmaMode::kFixed) s.proto.set_fixed_sigma(config.fixed_sigma);
  return s;
}

double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || labels.empty()) {
    throw DimensionError("cross_entropy: one label per row required");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= probs.cols()) throw InvariantError("cross_entropy: label out of range");
    total -= std::log(std::max(probs(static_cast<Eigen::Index>(i), labels[i]), kProbabilityFloor));
  }
  return total / static_cast<double>(labels.size());
}

Matrix cross_entropy_gradient(const Matrix& probs, const std::vector<int>& labels) {
  Matrix g = Matrix::Zero(probs.rows(), probs.cols());
  const double n = static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = probs(static_cast<Eigen::Index>(i), labels[i]);
    if (p > kProbabilityFloor) g(static_cast<Eigen::Index>(i), labels[i]) = -1.0 / (n * p);
  }
  return g;
}

namespace {

DivergenceTerms ot_terms(const Matrix& mapped, const SourceClassBank& bank, const RunConfig& config) {
  return sinkhorn_divergence_terms(mapped, DiscreteDistribution::uniform(static_cast<std::size_t>(mapped.rows())),
                                   bank.means(), DiscreteDistribution::uniform(bank.num_classes()),
                                   config.divergence_options());
}

void require_finite(const NetworkGradient& g, const char* which, const Losses& losses) {
  for (const auto& layer : g) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw NumericalError(std::string("non-finite gradient in ") + which + " (loss " +
                           std::to_string(losses.total) + ", ce " + std::to_string(losses.ce) + ", ot " +
                           std::to_string(losses.ot) + ")");
    }
  }
}

}  // namespace

Losses total_loss(const std::vector<int>& labels, const Matrix& probs, const Matrix& mapped,
                  const SourceClassBank& bank, const RunConfig& config) {
  Losses l;
  l.ce = cross_entropy(probs, labels);
  l.ot = ot_terms(mapped, bank, config).value;
  l.total = l.ce + config.eta * l.ot;
  return l;
}

StepGradients compute_gradients(const ModelState& state, const Matrix& batch, const std::vector<int>& labels,
                                const SourceClassBank& bank, const RunConfig& config, double xi_prime,
                                const Matrix* fixed_plan) {
  if (static_cast<std::size_t>(batch.rows()) != labels.size()) {
    throw DimensionError("batch has " + std::to_string(batch.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  StepGradients out;
  DenseNetwork::Tape t1, t2, t3;
  const Matrix mapped = state.f1.forward(batch, t1);
  if (fixed_plan) {
    out.plan = *fixed_plan;
  } else {
    const HotResult hot = hotkt(mapped, bank, config.hot_options());
    out.plan = hot.plan.entries();
    out.hot_trace = hot_trace_record(hot);
  }
  const Matrix combined = transfer_combination(out.plan, bank.means());
  const Matrix transferred = state.f2.forward(combined, t2);
  const Matrix probs = state.f3.forward(fuse(transferred, mapped, xi_prime), t3);

  const DivergenceTerms terms = ot_terms(mapped, bank, config);
  out.losses.ce = cross_entropy(probs, labels);
  out.losses.ot = terms.value;
  out.losses.total = out.losses.ce + config.eta * out.losses.ot;

  const Matrix g_fused = state.f3.backward(t3, cross_entropy_gradient(probs, labels), out.f3);
  if (!config.f2_identity) state.f2.backward(t2, xi_prime * g_fused, out.f2);
  Matrix g_mapped = (1.0 - xi_prime) * g_fused;
  if (config.eta != 0.0) g_mapped += config.eta * divergence_gradient(terms, mapped, bank.means());
  state.f1.backward(t1, g_mapped, out.f1);

  require_finite(out.f1, "F1", out.losses);
  require_finite(out.f2, "F2", out.losses);
  require_finite(out.f3, "F3", out.losses);
  return out;
}

Trainer::Trainer(const RunConfig& config, ModelState state)
    : config_(config),
      state_(std::move(state)),
      adam_f1_(state_.f1, AdamOptions{config.learning_rate}),
      adam_f2_(state_.f2, AdamOptions{config.learning_rate}),
      adam_f3_(state_.f3, AdamOptions{config.learning_rate}) {}

Losses Trainer::backward_step(const Matrix& batch, const std::vector<int>& labels, const SourceClassBank& bank,
                              int epoch) {
  const double xi_prime = curriculum_weight(config_.schedule(), epoch);
  const StepGradients g = compute_gradients(state_, batch, labels, bank, config_, xi_prime);
  adam_f1_.step(state_.f1, g.f1);
  if (!config_.f2_identity) adam_f2_.step(state_.f2, g.f2);
  adam_f3_.step(state_.f3, g.f3);
  state_.proto.momentum_update(g.plan, labels);
  last_trace_ = g.hot_trace;
  return g.losses;
}

InferenceTrace infer_batch_trace(const ModelState& state, const Matrix& batch, const SourceClassBank& bank,
                                 const RunConfig& config, double xi_prime) {
  InferenceTrace out;
  const Matrix mapped = state.f1.forward(batch);
  out.plan = hotkt(mapped, bank, config.hot_options()).plan.entries();
  out.reweighted = state.proto.reweight(out.plan);
  const Matrix transferred = transfer_features(out.reweighted.plan, bank.means(), state.f2);
  out.probs = state.f3.forward(fuse(transferred, mapped, xi_prime));
  return out;
}

Matrix infer_batch(const ModelState& state, const Matrix& batch, const SourceClassBank& bank,
                   const RunConfig& config, double xi_prime) {
  return infer_batch_trace(state, batch, bank, config, xi_prime).probs;
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json j{{"acc", acc}, {"f1", f1}, {"f1_defined", f1_defined}, {"auc_defined", auc_defined}};
  j["auc"] = auc_defined ? nlohmann::json(auc) : nlohmann::json(nullptr);
  return j;
}

Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw DimensionError("compute_metrics: need one score per label");
  }
  Metrics m;
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0, positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw InvariantError("compute_metrics: labels must be binary");
    if (!(scores[i] >= 0.0 && scores[i] <= 1.0)) throw InvariantError("compute_metrics: scores must lie in [0, 1]");
    const bool predicted = scores[i] > 0.5;
    const bool actual = labels[i] == 1;
    positives += actual;
    correct += predicted == actual;
    tp += predicted && actual;
    fp += predicted && !actual;
    fn += !predicted && actual;
  }
  const std::size_t n = scores.size();
  m.acc = static_cast<double>(correct) / static_cast<double>(n);
  m.f1_defined = tp + fp > 0 && positives > 0;
  const std::size_t denom = 2 * tp + fp + fn;
  m.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);

  const std::size_t negatives = n - positives;
  m.auc_defined = positives > 0 && negatives > 0;
  if (!m.auc_defined) {
    m.auc = 0.0;
    return m;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) positive_rank_sum += rank;
    i = j + 1;
  }
  const double p = static_cast<double>(positives);
  m.auc = (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
  return m;
}

Metrics evaluate(const ModelState& state, const Dataset& data, const SourceClassBank& bank, const RunConfig& config,
                 double xi_prime) {
  data.validate();
  std::vector<double> scores;
  std::vector<int> predicted;
  for (std::size_t start = 0; start < data.size(); start += config.batch_test) {
    const std::size_t count = std::min(config.batch_test, data.size() - start);
    const Matrix probs =
        infer_batch(state, data.features.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)),
                    bank, config, xi_prime);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      Eigen::Index arg = 0;
      probs.row(i).maxCoeff(&arg);
      predicted.push_back(static_cast<int>(arg));
      scores.push_back(probs.cols() > 1 ? probs(i, 1) : 0.0);
    }
  }
  if (data.num_classes == 2) return compute_metrics(scores, data.labels);
  Metrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  m.acc = static_cast<double>(correct) / static_cast<double>(predicted.size());
  m.f1_defined = false;
  m.auc_defined = false;
  return m;
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch},     {"xi_prime", xi_prime}, {"loss", losses.total},
                   {"loss_ce", losses.ce}, {"loss_ot", losses.ot}, {"acc", metrics.acc},
                   {"f1", metrics.f1}};
  j["auc"] = metrics.auc_defined ? nlohmann::json(metrics.auc) : nlohmann::json(nullptr);
  return j;
}

SourceClassBank build_bank(const Dataset& source, const RunConfig& config) {
  BankOptions options;
  options.cap_per_class = config.bank_cap;
  options.seed = config.seed;
  return SourceClassBank::build(class_blocks(source), options);
}

TrainResult train(const RunConfig& config, const Dataset& train_data, const Dataset* eval_data,
                  const SourceClassBank& bank, const std::function<void(const EpochRecord&)>& on_epoch,
                  const std::function<void(const nlohmann::json&)>& on_hot_trace) {
  config.validate();
  train_data.validate();
  if (train_data.size() < config.batch_train) {
    throw InvariantError("training set has " + std::to_string(train_data.size()) +
                         " samples, fewer than one batch of " + std::to_string(config.batch_train));
  }
  if (train_data.dim() != bank.dim()) throw DimensionError("target and source dimensions differ");
  const Dataset& eval_set = eval_data ? *eval_data : train_data;

  std::mt19937_64 rng(config.seed);
  Trainer trainer(config, ModelState::initial(config, train_data.dim(), train_data.num_classes,
                                              bank.num_classes(), rng));
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Losses sum;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_train) {
      const std::size_t end = std::min(order.size(), start + config.batch_train);
      const Dataset batch = train_data.subset({order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end)});
      const Losses l = trainer.backward_step(batch.features, batch.labels, bank, epoch);
      if (on_hot_trace) {
        nlohmann::json record = trainer.last_hot_trace();
        record["epoch"] = epoch;
        record["batch"] = batches;
        on_hot_trace(record);
      }
      sum.total += l.total;
      sum.ce += l.ce;
      sum.ot += l.ot;
      ++batches;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.xi_prime = curriculum_weight(config.schedule(), epoch);
    record.losses = {sum.total / batches, sum.ce / batches, sum.ot / batches};
    record.metrics = evaluate(trainer.state(), eval_set, bank, config, record.xi_prime);
    if (on_epoch) on_epoch(record);
    result.log.push_back(record);
  }
  result.state = trainer.state();
  return result;
}

}  // namespace affakt
