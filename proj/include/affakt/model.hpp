#pragma once

// The trainable pipeline: encoder F1, transfer network F2, classifier F3,
// the hierarchical-OT transfer and the correlation prototype.

#include "affakt/data.hpp"
#include "affakt/dense.hpp"
#include "affakt/hot.hpp"
#include "affakt/srkb.hpp"
#include "affakt/transfer.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace affakt {

enum class TestXiPolicy { kLast, kMax };
enum class SigmaMode { kAdaptive, kFixed };

/// Run configuration. Text form is `key = value` per line; `#` starts a
/// comment. to_text() writes every key, so a run can be reproduced from it.
struct RunConfig {
  std::uint64_t seed = 7;
  int epochs = 20;
  std::size_t batch_train = 4;
  std::size_t batch_test = 2;
  /// `desk` (lr 1e-4) or `paper` (lr 1e-5); an explicit learning_rate wins.
  std::string preset = "desk";
  double learning_rate = 1e-4;

  double epsilon = 0.1;
  int sinkhorn_max_iters = 100000;
  double sinkhorn_tol = 1e-6;
  CostMode cost_mode = CostMode::kPerRow;
  bool entropic_divergence = false;
  std::size_t bank_cap = 256;

  double eta = 0.01;
  double alpha = 0.95;
  double nu = 0.1;
  double xi = 0.2;
  TestXiPolicy test_xi = TestXiPolicy::kLast;
  SigmaMode sigma_mode = SigmaMode::kAdaptive;
  double fixed_sigma = 0.2;
  ScaleMode scale_mode = ScaleMode::kNormalized;

  std::size_t hidden = 64;
  bool f2_identity = false;
  InitScheme init = InitScheme::kIdentity;
  double init_noise = 0.01;

  void validate() const;
  std::string to_text() const;
  /// Unknown keys, duplicates and unparsable values raise ConfigError.
  static RunConfig parse(const std::string& text);

  HotOptions hot_options() const;
  DivergenceOptions divergence_options() const;
  CurriculumSchedule schedule() const { return {xi, epochs}; }
  /// Transfer weight used at test time.
  double test_xi_prime() const;
};

struct ModelState {
  DenseNetwork f1;
  DenseNetwork f2;
  DenseNetwork f3;
  CorrelationPrototype proto;

  /// Fresh networks and a uniform prototype; consumes `rng`.
  static ModelState initial(const RunConfig& config, std::size_t dim, std::size_t target_classes,
                            std::size_t source_classes, std::mt19937_64& rng);
};

struct Losses {
  double total = 0.0;
  double ce = 0.0;
  double ot = 0.0;
};

/// -(1/n) sum_i log max(p_{i,y_i}, 1e-12).
double cross_entropy(const Matrix& probs, const std::vector<int>& labels);
/// dCE/dprobs; zero where the probability floor is active.
Matrix cross_entropy_gradient(const Matrix& probs, const std::vector<int>& labels);

inline constexpr double kProbabilityFloor = 1e-12;

/// L = CE + eta * S(uniform over rows of `mapped`, uniform over class means).
Losses total_loss(const std::vector<int>& labels, const Matrix& probs, const Matrix& mapped,
                  const SourceClassBank& bank, const RunConfig& config);

struct StepGradients {
  NetworkGradient f1;
  NetworkGradient f2;  // empty when F2 is the fixed identity
  NetworkGradient f3;
  Losses losses;
  Matrix plan;  // high-level plan used in the step
  /// hot_trace_record() of the step's plan; null when the plan was injected.
  nlohmann::json hot_trace;
};

/// Forward pass and analytic gradients with every transport plan held
/// constant. `fixed_plan` replaces the high-level plan when given.
StepGradients compute_gradients(const ModelState& state, const Matrix& batch, const std::vector<int>& labels,
                                const SourceClassBank& bank, const RunConfig& config, double xi_prime,
                                const Matrix* fixed_plan = nullptr);

/// Owns the optimizers; one backward_step per mini-batch.
class Trainer {
 public:
  Trainer(const RunConfig& config, ModelState state);

  /// Adam step on all trainable networks, then the prototype momentum update.
  Losses backward_step(const Matrix& batch, const std::vector<int>& labels, const SourceClassBank& bank,
                       int epoch);

  const ModelState& state() const noexcept { return state_; }
  ModelState& state() noexcept { return state_; }
  const nlohmann::json& last_hot_trace() const noexcept { return last_trace_; }

 private:
  RunConfig config_;
  ModelState state_;
  Adam adam_f1_;
  Adam adam_f2_;
  Adam adam_f3_;
  nlohmann::json last_trace_;
};

struct InferenceTrace {
  Matrix probs;
  Matrix plan;
  ReweightResult reweighted;
};

/// Test path: F1, hierarchical OT, prototype re-weighting, transfer, fuse, F3.
InferenceTrace infer_batch_trace(const ModelState& state, const Matrix& batch, const SourceClassBank& bank,
                                 const RunConfig& config, double xi_prime);
Matrix infer_batch(const ModelState& state, const Matrix& batch, const SourceClassBank& bank,
                   const RunConfig& config, double xi_prime);

struct Metrics {
  double acc = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  /// False when there are no positive predictions or no positive labels.
  bool f1_defined = true;
  /// False when only one class is present.
  bool auc_defined = true;

  nlohmann::json to_json() const;
};

/// Binary metrics: positive when score > 0.5; F1 of class 1; AUC as the
/// Mann-Whitney statistic with tie-averaged ranks.
Metrics compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels);

/// Runs infer_batch over consecutive batches of batch_test rows in order.
Metrics evaluate(const ModelState& state, const Dataset& data, const SourceClassBank& bank, const RunConfig& config,
                 double xi_prime);

struct EpochRecord {
  int epoch = 0;
  double xi_prime = 0.0;
  Losses losses;  // mean over the epoch's batches
  Metrics metrics;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochRecord> log;
};

SourceClassBank build_bank(const Dataset& source, const RunConfig& config);

/// Seeded shuffled mini-batches for config.epochs epochs. Epoch metrics use
/// the test path on `eval_data` (or the training data when null).
/// `on_hot_trace` receives one hierarchical-OT trace record per batch.
TrainResult train(const RunConfig& config, const Dataset& train_data, const Dataset* eval_data,
                  const SourceClassBank& bank, const std::function<void(const EpochRecord&)>& on_epoch = {},
                  const std::function<void(const nlohmann::json&)>& on_hot_trace = {});

struct Checkpoint {
  RunConfig config;
  ModelState state;
  SourceClassBank bank;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "AFKT" | u32 version | networks | prototype | config text | source bank.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace affakt
