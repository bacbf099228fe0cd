// affakt command line: synthetic data, training, evaluation and inspection.

#include "affakt/data.hpp"
#include "affakt/error.hpp"
#include "affakt/model.hpp"
#include "affakt/ot_core.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace affakt;

namespace {

std::string read_text(const std::string& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

int run_gen(const std::string& spec_path, const std::string& out_dir) {
  const SyntheticSpec spec = SyntheticSpec::from_json(nlohmann::json::parse(read_text(spec_path)));
  const SyntheticData data = generate(spec);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_embeddings((dir / "source.emb").string(), data.source);
  save_embeddings((dir / "target_train.emb").string(), data.target_train);
  save_embeddings((dir / "target_test.emb").string(), data.target_test);
  nlohmann::json manifest{{"spec", spec.to_json()},
                          {"files",
                           {{"source", "source.emb"}, {"target_train", "target_train.emb"},
                            {"target_test", "target_test.emb"}}},
                          {"counts",
                           {{"source", data.source.size()},
                            {"target_train", data.target_train.size()},
                            {"target_test", data.target_test.size()}}}};
  write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  std::cout << manifest.dump() << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& source_path, const std::string& target_path,
              const std::string& test_path, const std::string& out_dir, bool hot_trace) {
  const RunConfig config = RunConfig::parse(read_text(config_path));
  const Dataset source = load_embeddings(source_path);
  const Dataset target = load_embeddings(target_path);
  std::optional<Dataset> test;
  if (!test_path.empty()) test = load_embeddings(test_path);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_text((dir / "config.txt").string(), config.to_text());

  std::ofstream log((dir / "epoch_log.jsonl").string(), std::ios::trunc);
  std::ofstream trace;
  if (hot_trace) trace.open((dir / "hot_trace.jsonl").string(), std::ios::trunc);
  if (!log || (hot_trace && !trace)) throw Error("cannot write into '" + out_dir + "'");

  const SourceClassBank bank = build_bank(source, config);
  const TrainResult result = train(
      config, target, test ? &*test : nullptr, bank,
      [&](const EpochRecord& e) {
        const std::string line = e.to_json().dump();
        log << line << "\n" << std::flush;
        std::cerr << line << "\n";
      },
      hot_trace ? std::function<void(const nlohmann::json&)>([&](const nlohmann::json& r) { trace << r.dump() << "\n"; })
                : std::function<void(const nlohmann::json&)>());

  write_file((dir / "checkpoint.afkt").string(), encode_checkpoint({config, result.state, bank}));
  write_text((dir / "prototype.json").string(), result.state.proto.to_json().dump(2) + "\n");
  return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& target_path) {
  const Checkpoint cp = decode_checkpoint(read_file(checkpoint_path));
  const Dataset target = load_embeddings(target_path);
  const Metrics m = evaluate(cp.state, target, cp.bank, cp.config, cp.config.test_xi_prime());
  std::cout << m.to_json().dump() << "\n";
  return 0;
}

int run_ot_solve(const std::string& instance_path, std::optional<double> epsilon, bool exact) {
  const OtInstance inst = parse_ot_instance(read_text(instance_path));
  nlohmann::json out;
  Matrix plan;
  if (exact) {
    const ExactOtResult r = exact_ot(inst.p, inst.q, inst.cost);
    out["solver"] = "exact";
    out["cost"] = r.cost;
    plan = r.plan.entries();
  } else {
    SinkhornOptions options;
    options.epsilon = epsilon.value_or(inst.epsilon);
    options.max_iters = 100000;
    const SinkhornResult r = sinkhorn_solve(inst.p, inst.q, inst.cost, options);
    out["solver"] = "sinkhorn";
    out["epsilon"] = options.epsilon;
    out["iterations"] = r.iterations;
    out["marginal_violation"] = r.violation;
    out["cost"] = r.plan.cost(inst.cost);
    plan = r.plan.entries();
  }
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < plan.cols(); ++j) row.push_back(plan(i, j));
    rows.push_back(std::move(row));
  }
  out["plan"] = std::move(rows);
  std::cout << out.dump() << "\n";
  return 0;
}

int run_inspect(const std::string& checkpoint_path, const std::string& prototype_path, bool as_json) {
  const CorrelationPrototype proto =
      checkpoint_path.empty() ? CorrelationPrototype::from_json(nlohmann::json::parse(read_text(prototype_path)))
                              : decode_checkpoint(read_file(checkpoint_path)).state.proto;
  if (as_json) {
    nlohmann::json j = proto.to_json();
    if (proto.target_classes() >= 2) {
      nlohmann::json diff = nlohmann::json::array();
      for (const auto& [k, v] : proto.diff()) diff.push_back({{"source_class", k}, {"diff", v}});
      j["diff"] = std::move(diff);
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::printf("prototype B: %zu target x %zu source classes (alpha %g, nu %g)\n", proto.target_classes(),
              proto.source_classes(), proto.alpha(), proto.nu());
  std::printf("%-8s", "");
  for (std::size_t k = 0; k < proto.source_classes(); ++k) std::printf(" %9s", ("src" + std::to_string(k)).c_str());
  std::printf("\n");
  for (Eigen::Index l = 0; l < proto.B().rows(); ++l) {
    std::printf("%-8s", ("B_" + std::to_string(l)).c_str());
    for (Eigen::Index k = 0; k < proto.B().cols(); ++k) std::printf(" %9.6f", proto.B()(l, k));
    std::printf("\n");
  }
  if (proto.target_classes() >= 2) {
    std::printf("\nDIFF |B_0 - B_1| (descending)\n");
    for (const auto& [k, v] : proto.diff()) std::printf("src%-5zu %9.6f\n", k, v);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical optimal-transport knowledge transfer for embedding classifiers"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic source/target dataset");
  gen->add_option("--spec", spec_path, "Spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out-dir", out_dir, "Output directory")->required();

  std::string config_path, source_path, target_path, test_path, train_out;
  bool hot_trace = false;
  auto* tr = app.add_subcommand("train", "Train and write checkpoint, prototype and epoch log");
  tr->add_option("--config", config_path, "Run config (key = value)")->required()->check(CLI::ExistingFile);
  tr->add_option("--source", source_path, "Source embeddings (EMB1)")->required()->check(CLI::ExistingFile);
  tr->add_option("--target", target_path, "Target training embeddings (EMB1)")->required()->check(CLI::ExistingFile);
  tr->add_option("--test", test_path, "Embeddings for per-epoch evaluation (default: --target)")
      ->check(CLI::ExistingFile);
  tr->add_option("--out", train_out, "Output directory")->required();
  tr->add_flag("--hot-trace", hot_trace, "Also write one hierarchical-OT trace record per batch");

  std::string checkpoint_path, eval_target;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; prints metrics JSON");
  ev->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--target", eval_target, "Target embeddings (EMB1)")->required()->check(CLI::ExistingFile);

  std::string instance_path;
  double epsilon = 0.0;
  bool exact = false;
  auto* ot = app.add_subcommand("ot-solve", "Solve one OT instance; prints plan and cost");
  ot->add_option("--instance", instance_path, "Instance text file")->required()->check(CLI::ExistingFile);
  auto* eps_opt = ot->add_option("--epsilon", epsilon, "Override the instance epsilon")->check(CLI::PositiveNumber);
  auto* exact_opt = ot->add_flag("--exact", exact, "Use the exact transportation simplex");
  eps_opt->excludes(exact_opt);

  std::string inspect_checkpoint, inspect_prototype;
  bool inspect_json = false;
  auto* in = app.add_subcommand("inspect-prototype", "Print prototype rows and the DIFF table");
  auto* ck = in->add_option("--checkpoint", inspect_checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  auto* pj = in->add_option("--prototype", inspect_prototype, "Prototype JSON")->check(CLI::ExistingFile);
  ck->excludes(pj);
  in->add_flag("--json", inspect_json, "Print JSON instead of a table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_gen(spec_path, out_dir);
    if (*tr) return run_train(config_path, source_path, target_path, test_path, train_out, hot_trace);
    if (*ev) return run_eval(checkpoint_path, eval_target);
    if (*ot) return run_ot_solve(instance_path, eps_opt->count() ? std::optional<double>(epsilon) : std::nullopt, exact);
    if (*in) {
      if (inspect_checkpoint.empty() && inspect_prototype.empty()) {
        std::cerr << "inspect-prototype: give --checkpoint or --prototype\n";
        return 2;
      }
      return run_inspect(inspect_checkpoint, inspect_prototype, inspect_json);
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
