#include "affakt/error.hpp"
#include "affakt/model.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace affakt {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + value + "'");
}

[[noreturn]] void bad_choice(const std::string& key, const std::string& value, const std::string& choices) {
  throw ConfigError("config: '" + key + "' must be one of " + choices + ", got '" + value + "'");
}

double preset_learning_rate(const std::string& preset) {
  if (preset == "desk") return 1e-4;
  if (preset == "paper") return 1e-5;
  bad_choice("preset", preset, "desk|paper");
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_train < 1 || batch_test < 1) fail("batch sizes must be positive");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (sinkhorn_max_iters < 1) fail("sinkhorn_max_iters must be positive");
  if (!(sinkhorn_tol > 0.0)) fail("sinkhorn_tol must be > 0");
  if (!(eta >= 0.0)) fail("eta must be >= 0");
  if (!(alpha >= 0.0 && alpha < 1.0)) fail("alpha must lie in [0, 1)");
  if (!(nu >= 0.0)) fail("nu must be >= 0");
  if (!(xi >= 0.0 && xi <= 1.0)) fail("xi must lie in [0, 1]");
  if (!(fixed_sigma >= 0.0 && fixed_sigma <= 1.0)) fail("fixed_sigma must lie in [0, 1]");
  if (hidden < 1) fail("hidden must be positive");
  if (!(init_noise >= 0.0)) fail("init_noise must be >= 0");
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "seed = " << seed << "\n"
      << "epochs = " << epochs << "\n"
      << "batch_train = " << batch_train << "\n"
      << "batch_test = " << batch_test << "\n"
      << "preset = " << preset << "\n"
      << "learning_rate = " << fmt_double(learning_rate) << "\n"
      << "epsilon = " << fmt_double(epsilon) << "\n"
      << "sinkhorn_max_iters = " << sinkhorn_max_iters << "\n"
      << "sinkhorn_tol = " << fmt_double(sinkhorn_tol) << "\n"
      << "cost_mode = " << (cost_mode == CostMode::kPerRow ? "per_row" : "broadcast") << "\n"
      << "divergence = " << (entropic_divergence ? "entropic" : "exact") << "\n"
      << "bank_cap = " << bank_cap << "\n"
      << "eta = " << fmt_double(eta) << "\n"
      << "alpha = " << fmt_double(alpha) << "\n"
      << "nu = " << fmt_double(nu) << "\n"
      << "xi = " << fmt_double(xi) << "\n"
      << "test_xi = " << (test_xi == TestXiPolicy::kLast ? "last" : "max") << "\n"
      << "sigma_mode = " << (sigma_mode == SigmaMode::kAdaptive ? "adaptive" : "fixed") << "\n"
      << "fixed_sigma = " << fmt_double(fixed_sigma) << "\n"
      << "scale_mode = " << to_string(scale_mode) << "\n"
      << "hidden = " << hidden << "\n"
      << "f2_identity = " << (f2_identity ? "true" : "false") << "\n"
      << "init = " << (init == InitScheme::kIdentity ? "identity" : "random") << "\n"
      << "init_noise = " << fmt_double(init_noise) << "\n";
  return out.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    }
    if (!values.emplace(key, value).second) throw ConfigError("config: duplicate key '" + key + "'");
  }

  RunConfig c;
  if (auto it = values.find("preset"); it != values.end()) {
    c.learning_rate = preset_learning_rate(it->second);
    c.preset = it->second;
  }
  for (const auto& [key, value] : values) {
    if (key == "preset") {
    } else if (key == "seed") {
      c.seed = parse_integer<std::uint64_t>(key, value);
    } else if (key == "epochs") {
      c.epochs = parse_integer<int>(key, value);
    } else if (key == "batch_train") {
      c.batch_train = parse_integer<std::size_t>(key, value);
    } else if (key == "batch_test") {
      c.batch_test = parse_integer<std::size_t>(key, value);
    } else if (key == "learning_rate") {
      c.learning_rate = parse_double(key, value);
    } else if (key == "epsilon") {
      c.epsilon = parse_double(key, value);
    } else if (key == "sinkhorn_max_iters") {
      c.sinkhorn_max_iters = parse_integer<int>(key, value);
    } else if (key == "sinkhorn_tol") {
      c.sinkhorn_tol = parse_double(key, value);
    } else if (key == "cost_mode") {
      if (value == "per_row") c.cost_mode = CostMode::kPerRow;
      else if (value == "broadcast") c.cost_mode = CostMode::kBroadcast;
      else bad_choice(key, value, "per_row|broadcast");
    } else if (key == "divergence") {
      if (value == "exact") c.entropic_divergence = false;
      else if (value == "entropic") c.entropic_divergence = true;
      else bad_choice(key, value, "exact|entropic");
    } else if (key == "bank_cap") {
      c.bank_cap = parse_integer<std::size_t>(key, value);
    } else if (key == "eta") {
      c.eta = parse_double(key, value);
    } else if (key == "alpha") {
      c.alpha = parse_double(key, value);
    } else if (key == "nu") {
      c.nu = parse_double(key, value);
    } else if (key == "xi") {
      c.xi = parse_double(key, value);
    } else if (key == "test_xi") {
      if (value == "last") c.test_xi = TestXiPolicy::kLast;
      else if (value == "max") c.test_xi = TestXiPolicy::kMax;
      else bad_choice(key, value, "last|max");
    } else if (key == "sigma_mode") {
      if (value == "adaptive") c.sigma_mode = SigmaMode::kAdaptive;
      else if (value == "fixed") c.sigma_mode = SigmaMode::kFixed;
      else bad_choice(key, value, "adaptive|fixed");
    } else if (key == "fixed_sigma") {
      c.fixed_sigma = parse_double(key, value);
    } else if (key == "scale_mode") {
      if (value == "normalized") c.scale_mode = ScaleMode::kNormalized;
      else if (value == "raw") c.scale_mode = ScaleMode::kRaw;
      else bad_choice(key, value, "normalized|raw");
    } else if (key == "hidden") {
      c.hidden = parse_integer<std::size_t>(key, value);
    } else if (key == "f2_identity") {
      c.f2_identity = parse_bool(key, value);
    } else if (key == "init") {
      if (value == "identity") c.init = InitScheme::kIdentity;
      else if (value == "random") c.init = InitScheme::kRandom;
      else bad_choice(key, value, "identity|random");
    } else if (key == "init_noise") {
      c.init_noise = parse_double(key, value);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

HotOptions RunConfig::hot_options() const {
  HotOptions h;
  h.sinkhorn = {epsilon, sinkhorn_max_iters, sinkhorn_tol};
  h.cost_mode = cost_mode;
  return h;
}

DivergenceOptions RunConfig::divergence_options() const {
  DivergenceOptions d;
  d.entropic = entropic_divergence;
  d.sinkhorn = {epsilon, sinkhorn_max_iters, sinkhorn_tol};
  return d;
}

double RunConfig::test_xi_prime() const {
  if (test_xi == TestXiPolicy::kMax) return xi;
  // Untrained: the curriculum never started.
  return epochs == 0 ? 0.0 : curriculum_weight(schedule(), epochs);
}

}  // namespace affakt
