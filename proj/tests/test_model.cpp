#include "doctest.h"

#include "affakt/error.hpp"
#include "affakt/model.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace affakt;
using affakt::testing::random_distribution;
using affakt::testing::random_gaussian;

namespace {

SourceClassBank gaussian_bank(std::size_t classes, Eigen::Index per_class, Eigen::Index d, std::mt19937_64& rng) {
  std::vector<Matrix> blocks;
  std::vector<DiscreteDistribution> importance;
  for (std::size_t k = 0; k < classes; ++k) {
    Matrix b = random_gaussian(per_class, d, rng);
    b.rowwise() += 2.0 * random_gaussian(1, d, rng).row(0);
    blocks.push_back(b);
    importance.push_back(DiscreteDistribution::uniform(static_cast<std::size_t>(per_class)));
  }
  return SourceClassBank(std::move(blocks), std::move(importance));
}

RunConfig tiny_config() {
  RunConfig c = RunConfig::parse("hidden = 4\ninit = random\neta = 0.5\n");
  return c;
}

SyntheticData small_synthetic(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.source_classes = 4;
  spec.dim = 8;
  spec.source_per_class = 30;
  spec.target_count = 60;
  spec.noise_sigma = 0.3;
  spec.mixing = SyntheticSpec::one_hot_mixing({0, 1}, 4);
  spec.seed = seed;
  return generate(spec);
}

// Straight-line loss with the high-level plan frozen; the divergence is
// recomputed from scratch at every call.
double frozen_plan_loss(const ModelState& s, const Matrix& x, const std::vector<int>& y, const SourceClassBank& bank,
                        const RunConfig& c, double xi_prime, const Matrix& plan) {
  const Matrix mapped = s.f1.forward(x);
  const Matrix z = static_cast<double>(plan.rows()) * plan * bank.means();
  const Matrix fused = xi_prime * s.f2.forward(z) + (1 - xi_prime) * mapped;
  const Matrix probs = s.f3.forward(fused);
  double ce = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) ce -= std::log(probs(static_cast<Eigen::Index>(i), y[i]));
  ce /= static_cast<double>(y.size());
  const double ot = sinkhorn_divergence(mapped, DiscreteDistribution::uniform(y.size()), bank.means(),
                                        DiscreteDistribution::uniform(bank.num_classes()));
  return ce + c.eta * ot;
}

}  // namespace

TEST_CASE("cross entropy: reference values and clamp") {
  Matrix perfect(2, 2);
  perfect << 1, 0, 0, 1;
  CHECK(cross_entropy(perfect, {0, 1}) == doctest::Approx(0.0));
  CHECK(cross_entropy(Matrix::Constant(3, 2, 0.5), {0, 1, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Matrix p(3, 3);
  p << 0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4;
  const double hand = -(std::log(0.7) + std::log(0.8) + std::log(0.3)) / 3.0;
  CHECK(cross_entropy(p, {0, 1, 0}) == doctest::Approx(hand).epsilon(1e-15));

  // Confidently wrong: loss is capped and the gradient vanishes.
  CHECK(cross_entropy(perfect, {1, 0}) == doctest::Approx(-std::log(1e-12)));
  CHECK(cross_entropy_gradient(perfect, {1, 0}).cwiseAbs().maxCoeff() == 0.0);
  const Matrix g = cross_entropy_gradient(p, {0, 1, 0});
  CHECK(g(0, 0) == doctest::Approx(-1.0 / (3 * 0.7)));
  CHECK(g(0, 1) == 0.0);
  CHECK_THROWS_AS(cross_entropy(p, {0, 1}), DimensionError);
  CHECK_THROWS_AS(cross_entropy(p, {0, 1, 5}), InvariantError);
}

TEST_CASE("total loss composition") {
  std::mt19937_64 rng(41);
  const SourceClassBank bank = gaussian_bank(3, 6, 5, rng);
  RunConfig c = tiny_config();
  const Matrix probs = Matrix::Constant(3, 2, 0.5);
  const std::vector<int> y{0, 1, 0};

  c.eta = 0.0;
  const Matrix mapped = random_gaussian(3, 5, rng);
  const Losses none = total_loss(y, probs, mapped, bank, c);
  CHECK(none.total == none.ce);

  c.eta = 0.3;
  const Losses l = total_loss(y, probs, mapped, bank, c);
  CHECK(l.ce == cross_entropy(probs, y));
  CHECK(l.ot == sinkhorn_divergence(mapped, DiscreteDistribution::uniform(3), bank.means(),
                                    DiscreteDistribution::uniform(3)));
  CHECK(l.total == l.ce + 0.3 * l.ot);

  const Losses same = total_loss(y, probs, bank.means(), bank, c);
  CHECK(std::abs(same.ot) <= 1e-9);
}

TEST_CASE("gradient check: every parameter against central differences") {
  std::mt19937_64 rng(42);
  const SourceClassBank bank = gaussian_bank(3, 6, 5, rng);
  const RunConfig c = tiny_config();
  ModelState s = ModelState::initial(c, 5, 2, 3, rng);
  const Matrix x = random_gaussian(3, 5, rng);
  const std::vector<int> y{0, 1, 1};
  const double xi_prime = 0.3;

  const StepGradients g = compute_gradients(s, x, y, bank, c, xi_prime);
  CHECK(g.losses.total == doctest::Approx(frozen_plan_loss(s, x, y, bank, c, xi_prime, g.plan)).epsilon(1e-12));

  const double h = 1e-4;
  double worst = 0.0;
  auto check_net = [&](DenseNetwork& net, const NetworkGradient& analytic_grad) {
    const Vector analytic = DenseNetwork::flatten(analytic_grad);
    const Vector theta = net.flat_parameters();
    for (Eigen::Index p = 0; p < theta.size(); ++p) {
      Vector shifted = theta;
      shifted(p) = theta(p) + h;
      net.set_flat_parameters(shifted);
      const double up = frozen_plan_loss(s, x, y, bank, c, xi_prime, g.plan);
      shifted(p) = theta(p) - h;
      net.set_flat_parameters(shifted);
      const double down = frozen_plan_loss(s, x, y, bank, c, xi_prime, g.plan);
      net.set_flat_parameters(theta);
      const double fd = (up - down) / (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(analytic(p)), 1e-6});
      worst = std::max(worst, std::abs(fd - analytic(p)) / scale);
    }
  };
  check_net(s.f1, g.f1);
  check_net(s.f2, g.f2);
  check_net(s.f3, g.f3);
  CHECK(worst < 1e-4);
  CHECK(DenseNetwork::flatten(g.f1).cwiseAbs().maxCoeff() > 0.0);
  CHECK(DenseNetwork::flatten(g.f2).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("stop-gradient: a frozen plan fixes the gradients") {
  std::mt19937_64 rng(43);
  const SourceClassBank bank = gaussian_bank(3, 6, 5, rng);
  // Same features and means, different importance: the plan moves.
  std::vector<Matrix> blocks;
  std::vector<DiscreteDistribution> importance;
  for (const auto& cls : bank.classes()) {
    blocks.push_back(cls.features);
    importance.push_back(random_distribution(static_cast<std::size_t>(cls.features.rows()), rng));
  }
  const SourceClassBank reweighted(std::move(blocks), std::move(importance));
  REQUIRE(reweighted.means() == bank.means());

  const RunConfig c = RunConfig::parse("hidden = 12\neta = 0.5\n");
  const ModelState s = ModelState::initial(c, 5, 2, 3, rng);
  const Matrix x = random_gaussian(3, 5, rng);
  const std::vector<int> y{1, 0, 1};
  const StepGradients a = compute_gradients(s, x, y, bank, c, 0.4);
  const StepGradients b = compute_gradients(s, x, y, reweighted, c, 0.4);
  CHECK((a.plan - b.plan).cwiseAbs().maxCoeff() > 1e-6);

  const StepGradients fa = compute_gradients(s, x, y, bank, c, 0.4, &a.plan);
  const StepGradients fb = compute_gradients(s, x, y, reweighted, c, 0.4, &a.plan);
  CHECK(DenseNetwork::flatten(fa.f1) == DenseNetwork::flatten(fb.f1));
  CHECK(DenseNetwork::flatten(fa.f2) == DenseNetwork::flatten(fb.f2));
  CHECK(DenseNetwork::flatten(fa.f3) == DenseNetwork::flatten(fb.f3));
  CHECK(DenseNetwork::flatten(fa.f3) == DenseNetwork::flatten(a.f3));
}

TEST_CASE("backward step: zero learning rate still updates the prototype") {
  std::mt19937_64 rng(44);
  const SourceClassBank bank = gaussian_bank(3, 6, 5, rng);
  RunConfig c = tiny_config();
  c.learning_rate = 0.0;
  Trainer t(c, ModelState::initial(c, 5, 2, 3, rng));
  const Vector before = t.state().f1.flat_parameters();
  const Matrix b_before = t.state().proto.B();
  t.backward_step(random_gaussian(4, 5, rng), {0, 1, 1, 0}, bank, 3);
  CHECK(t.state().f1.flat_parameters() == before);
  CHECK(t.state().proto.B() != b_before);
  CHECK((t.state().proto.B().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("backward step: identical seeds give identical trajectories") {
  std::mt19937_64 data_rng(45);
  const SourceClassBank bank = gaussian_bank(3, 6, 5, data_rng);
  const Matrix x = random_gaussian(4, 5, data_rng);
  const RunConfig c = tiny_config();
  auto run = [&] {
    std::mt19937_64 rng(9);
    Trainer t(c, ModelState::initial(c, 5, 2, 3, rng));
    for (int e = 1; e <= 5; ++e) t.backward_step(x, {0, 1, 1, 0}, bank, e);
    return t.state();
  };
  const ModelState a = run();
  const ModelState b = run();
  CHECK(a.f1.flat_parameters() == b.f1.flat_parameters());
  CHECK(a.f2.flat_parameters() == b.f2.flat_parameters());
  CHECK(a.f3.flat_parameters() == b.f3.flat_parameters());
  CHECK(a.proto.B() == b.proto.B());
}

TEST_CASE("f2 identity mode leaves F2 untouched") {
  std::mt19937_64 rng(46);
  const SourceClassBank bank = gaussian_bank(3, 6, 5, rng);
  RunConfig c = tiny_config();
  c.f2_identity = true;
  Trainer t(c, ModelState::initial(c, 5, 2, 3, rng));
  t.backward_step(random_gaussian(4, 5, rng), {0, 1, 1, 0}, bank, 10);
  CHECK(t.state().f2.layers().size() == 1);
  CHECK(t.state().f2.layers()[0].weight == Matrix::Identity(5, 5));
}

TEST_CASE("inference follows the scripted test path") {
  std::mt19937_64 rng(47);
  const SourceClassBank bank = gaussian_bank(3, 6, 5, rng);
  RunConfig c = tiny_config();
  ModelState s = ModelState::initial(c, 5, 2, 3, rng);
  Matrix warm = Matrix::Zero(2, 3);
  warm(0, 0) = warm(1, 2) = 0.5;
  s.proto.momentum_update(warm, {0, 1});
  const Matrix x = random_gaussian(2, 5, rng);

  const Matrix mapped = s.f1.forward(x);
  const Matrix plan = hotkt(mapped, bank, c.hot_options()).plan.entries();
  const ReweightResult r = s.proto.reweight(plan);
  const Matrix fused = fuse(transfer_features(r.plan, bank.means(), s.f2), mapped, 0.15);
  CHECK(infer_batch(s, x, bank, c, 0.15) == s.f3.forward(fused));

  // nu above any raw-row std: the plan only matters through the assignment.
  s.proto.set_nu(1.0);
  const InferenceTrace tr = infer_batch_trace(s, x, bank, c, 0.15);
  for (Eigen::Index i = 0; i < 2; ++i) {
    CHECK(tr.reweighted.sigma(i) == 0.0);
    const auto l = static_cast<Eigen::Index>(tr.reweighted.assigned[static_cast<std::size_t>(i)]);
    CHECK(tr.reweighted.plan.row(i) == s.proto.B().row(l) / 2.0);
  }

  // Identical prototype rows and sigma = 0: one transferred vector for all samples.
  ModelState flat = ModelState::initial(c, 5, 2, 3, rng);
  flat.proto.set_nu(1.0);
  const Matrix xs = random_gaussian(4, 5, rng);
  const InferenceTrace ft = infer_batch_trace(flat, xs, bank, c, 0.15);
  const Matrix trans = transfer_features(ft.reweighted.plan, bank.means(), flat.f2);
  for (Eigen::Index i = 1; i < 4; ++i) CHECK(trans.row(i) == trans.row(0));
}

TEST_CASE("metrics: reference cases") {
  const Metrics perfect = compute_metrics({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
  CHECK(perfect.acc == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.auc == 1.0);

  const Metrics ties = compute_metrics({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0});
  CHECK(ties.auc == 0.5);
  CHECK(ties.acc == 0.5);
  CHECK(ties.f1 == 0.0);
  CHECK_FALSE(ties.f1_defined);

  // scores 0.9(1) 0.6(0) 0.4(1) 0.2(0): TP=1 FP=1 FN=1 TN=1;
  // positive ranks 4 and 2 -> U = 6 - 3 = 3 -> AUC 3/4.
  const Metrics hand = compute_metrics({0.9, 0.6, 0.4, 0.2}, {1, 0, 1, 0});
  CHECK(hand.acc == 0.5);
  CHECK(hand.f1 == doctest::Approx(0.5));
  CHECK(hand.auc == 0.75);

  // Tie across classes: ranks (1.5, 1.5) -> positive rank sum 1.5 + 3.
  const Metrics tie_mix = compute_metrics({0.3, 0.3, 0.7}, {1, 0, 1});
  CHECK(tie_mix.auc == doctest::Approx((4.5 - 3.0) / 2.0));

  const Metrics single = compute_metrics({0.2, 0.9}, {1, 1});
  CHECK_FALSE(single.auc_defined);
  CHECK(single.to_json().at("auc").is_null());
  CHECK_THROWS_AS(compute_metrics({0.2}, {2}), InvariantError);
  CHECK_THROWS_AS(compute_metrics({1.2}, {1}), InvariantError);
}

TEST_CASE("train: zero learning rate, one epoch") {
  const SyntheticData d = small_synthetic(3);
  RunConfig c = RunConfig::parse("epochs = 1\nlearning_rate = 0\nhidden = 16\n");
  const SourceClassBank bank = build_bank(d.source, c);
  const TrainResult r = train(c, d.target_train, &d.target_test, bank);
  std::mt19937_64 rng(c.seed);
  const ModelState fresh = ModelState::initial(c, 8, 2, 4, rng);
  const Metrics m = evaluate(fresh, d.target_test, bank, c, 0.0);
  CHECK(r.log.size() == 1);
  CHECK(r.log[0].metrics.acc == m.acc);
  CHECK(r.log[0].metrics.auc == m.auc);
  CHECK(r.state.f3.flat_parameters() == fresh.f3.flat_parameters());
  CHECK(r.state.proto.B() != fresh.proto.B());
}

TEST_CASE("train: zero epochs leaves the initial state") {
  const SyntheticData d = small_synthetic(4);
  const RunConfig c = RunConfig::parse("epochs = 0\nhidden = 16\n");
  CHECK(c.test_xi_prime() == 0.0);
  const SourceClassBank bank = build_bank(d.source, c);
  const TrainResult r = train(c, d.target_train, &d.target_test, bank);
  std::mt19937_64 rng(c.seed);
  const ModelState fresh = ModelState::initial(c, 8, 2, 4, rng);
  CHECK(r.log.empty());
  CHECK(r.state.f1.flat_parameters() == fresh.f1.flat_parameters());
  for (const auto& [k, v] : r.state.proto.diff()) CHECK(v == 0.0);
}

TEST_CASE("train: loss falls, logs are reproducible") {
  const SyntheticData d = small_synthetic(4);
  const RunConfig c = RunConfig::parse("epochs = 6\nhidden = 16\nlearning_rate = 1e-3\n");
  const SourceClassBank bank = build_bank(d.source, c);
  std::vector<std::string> lines;
  const TrainResult a = train(c, d.target_train, &d.target_test, bank,
                              [&](const EpochRecord& e) { lines.push_back(e.to_json().dump()); });
  const TrainResult b = train(c, d.target_train, &d.target_test, bank);
  REQUIRE(a.log.size() == 6);
  CHECK(lines.size() == 6);
  CHECK(a.log.back().losses.total < a.log.front().losses.total);
  for (std::size_t e = 0; e < a.log.size(); ++e) CHECK(a.log[e].to_json().dump() == b.log[e].to_json().dump());
  CHECK(a.log.back().xi_prime == c.test_xi_prime());
  const Metrics final_eval = evaluate(a.state, d.target_test, bank, c, c.test_xi_prime());
  CHECK(final_eval.to_json() == a.log.back().metrics.to_json());

  Dataset tiny = d.target_train.subset({0, 1, 2});
  CHECK_THROWS_AS(train(c, tiny, nullptr, bank), InvariantError);
}

TEST_CASE("config: parsing, echo and errors") {
  const RunConfig defaults = RunConfig::parse("");
  CHECK(defaults.learning_rate == 1e-4);
  CHECK(defaults.batch_train == 4);
  CHECK(defaults.batch_test == 2);
  CHECK(defaults.alpha == 0.95);
  CHECK(defaults.eta == 0.01);
  CHECK(defaults.cost_mode == CostMode::kPerRow);
  CHECK(RunConfig::parse(defaults.to_text()).to_text() == defaults.to_text());

  const RunConfig c = RunConfig::parse(
      "# comment\nxi = 0.35  # trailing\nsigma_mode = fixed\nfixed_sigma = 0.2\ncost_mode = broadcast\n"
      "test_xi = max\ndivergence = entropic\nf2_identity = true\nseed = 99\n");
  CHECK(c.xi == 0.35);
  CHECK(c.sigma_mode == SigmaMode::kFixed);
  CHECK(c.cost_mode == CostMode::kBroadcast);
  CHECK(c.test_xi_prime() == 0.35);
  CHECK(c.entropic_divergence);
  CHECK(c.f2_identity);
  CHECK(c.seed == 99);
  CHECK(RunConfig::parse(c.to_text()).to_text() == c.to_text());

  CHECK(RunConfig::parse("preset = paper").learning_rate == 1e-5);
  CHECK(RunConfig::parse("learning_rate = 3e-4\npreset = paper").learning_rate == 3e-4);

  CHECK_THROWS_AS(RunConfig::parse("colour = red"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("xi = lots"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("xi = 0.1\nxi = 0.2"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("xi"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("alpha = 1"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("epochs = -2"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("test_xi = first"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("preset = fast"), ConfigError);
}

TEST_CASE("checkpoint round-trip reproduces evaluation") {
  const SyntheticData d = small_synthetic(5);
  const RunConfig c = RunConfig::parse("epochs = 2\nhidden = 16\nsigma_mode = fixed\n");
  const SourceClassBank bank = build_bank(d.source, c);
  const TrainResult r = train(c, d.target_train, &d.target_test, bank);
  const Checkpoint cp{c, r.state, bank};
  const auto bytes = encode_checkpoint(cp);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "AFKT");

  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.config.to_text() == c.to_text());
  CHECK(back.state.proto.B() == r.state.proto.B());
  CHECK(back.state.proto.fixed_sigma() == r.state.proto.fixed_sigma());
  CHECK(back.bank.means() == bank.means());
  const Metrics m = evaluate(back.state, d.target_test, back.bank, back.config, back.config.test_xi_prime());
  CHECK(m.to_json() == r.log.back().metrics.to_json());

  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  try {
    decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 8);
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
}
