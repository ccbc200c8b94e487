// Command-line front end: generate, split, train, evaluate, sweep, report.
//
// Exit codes: 0 success, 2 validation error, 3 numeric/divergence error.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cbobcat/baselines.hpp"
#include "cbobcat/checkpoint.hpp"
#include "cbobcat/data.hpp"
#include "cbobcat/errors.hpp"
#include "cbobcat/harness.hpp"
#include "cbobcat/trainer.hpp"

namespace {

using namespace cbobcat;

constexpr int kValidationExit = 2;
constexpr int kNumericExit = 3;

struct DataOptions {
  std::string data;
  std::string split_file;
  std::uint64_t split_seed = 0;
  double omega_fraction = 0.8;
};

struct Prepared {
  ResponseDataset ds;
  InnerOuterPartition partition;
};

Prepared prepare(const DataOptions& opt) {
  Prepared p;
  p.ds = load_csv(opt.data);
  if (!opt.split_file.empty()) {
    p.partition = parse_assignment(read_text(opt.split_file), p.ds, opt.split_file);
  } else {
    p.ds = split_students(p.ds, SplitRatios{}, opt.split_seed);
    p.partition = partition_questions(p.ds, opt.omega_fraction, opt.split_seed);
  }
  return p;
}

void add_data_options(CLI::App* cmd, DataOptions& opt) {
  cmd->add_option("--data", opt.data, "Response CSV (student_id,question_id,correct)")->required();
  cmd->add_option("--split", opt.split_file, "Assignment CSV written by 'split'; otherwise split on the fly");
  cmd->add_option("--split-seed", opt.split_seed, "Seed for on-the-fly splitting");
  cmd->add_option("--omega", opt.omega_fraction, "Fraction of each student's responses in the selection pool");
}

struct TrainOptions {
  std::string config;
  std::optional<double> lambda;
  std::optional<double> tau;
  std::optional<std::int32_t> test_length;
  std::optional<std::uint64_t> seed;
  std::optional<std::int32_t> epochs;
  std::optional<std::int32_t> workers;
  std::string method = "c-biirt";
};

void add_train_options(CLI::App* cmd, TrainOptions& opt, bool with_lambda) {
  cmd->add_option("--config", opt.config, "Training config file (key = value)");
  if (with_lambda) cmd->add_option("--lambda", opt.lambda, "Entropy weight");
  cmd->add_option("--tau", opt.tau, "Gumbel-Softmax temperature");
  cmd->add_option("--test-length", opt.test_length, "Questions per test (T)");
  cmd->add_option("--seed", opt.seed, "Training seed");
  cmd->add_option("--epochs", opt.epochs, "Training epochs");
  cmd->add_option("--workers", opt.workers, "Worker threads for batch gradients");
}

TrainConfig build_config(const TrainOptions& opt, std::optional<Method> method) {
  TrainConfig cfg;
  if (!opt.config.empty()) {
    auto table = load_config(opt.config);
    apply_config(table, cfg);
    if (!table.empty()) throw ArgumentError(opt.config + ": unknown key '" + table.begin()->first + "'");
  }
  if (method) cfg.variant = *method == Method::c_binn ? ModelVariant::neural : ModelVariant::irt;
  if (opt.lambda) cfg.lambda = *opt.lambda;
  if (opt.tau) cfg.tau = *opt.tau;
  if (opt.test_length) cfg.test_length = *opt.test_length;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.epochs) cfg.epochs = *opt.epochs;
  if (opt.workers) cfg.workers = *opt.workers;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ArgumentError("not a number in list: '" + item + "'");
    }
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Constrained bilevel computerized adaptive testing toolkit"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate synthetic 1PL response data");
  std::int32_t n_students = 1000;
  std::int32_t n_questions = 100;
  double density = 1.0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  std::string truth_out;
  gen->add_option("--students", n_students, "Number of students");
  gen->add_option("--questions", n_questions, "Question pool size");
  gen->add_option("--density", density, "Fraction of cells observed");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output response CSV")->required();
  gen->add_option("--truth", truth_out, "Optional ground-truth sidecar CSV");

  // split
  auto* split = app.add_subcommand("split", "Assign students to train/validation/test and partition responses");
  std::string split_data;
  std::string split_out;
  std::uint64_t split_seed = 0;
  std::string ratios_text = "0.6,0.2,0.2";
  double split_omega = 0.8;
  split->add_option("--data", split_data, "Response CSV")->required();
  split->add_option("--seed", split_seed, "Split seed");
  split->add_option("--ratios", ratios_text, "train,validation,test ratios");
  split->add_option("--omega", split_omega, "Fraction of each student's responses in the selection pool");
  split->add_option("--out", split_out, "Output assignment CSV")->required();

  // train
  auto* trn = app.add_subcommand("train", "Train a selection policy and response model");
  DataOptions train_data;
  TrainOptions train_opt;
  std::string train_out;
  std::string train_log;
  add_data_options(trn, train_data);
  add_train_options(trn, train_opt, true);
  trn->add_option("--method", train_opt.method, "c-biirt or c-binn");
  trn->add_option("--out", train_out, "Output checkpoint")->required();
  trn->add_option("--log", train_log, "Per-epoch log CSV");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run adaptive tests on the test students");
  DataOptions eval_data;
  TrainOptions eval_opt;
  std::string eval_method = "irt-active";
  std::string checkpoint;
  std::string eval_out;
  bool eval_greedy = false;
  std::int32_t eval_repeats = 1;
  add_data_options(ev, eval_data);
  add_train_options(ev, eval_opt, false);
  ev->add_option("--method", eval_method, "c-biirt, c-binn, irt-active or irt-random");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint for learned methods");
  ev->add_flag("--greedy", eval_greedy, "Arg-max selection instead of sampling");
  ev->add_option("--repeats", eval_repeats, "Average over this many evaluation seeds");
  ev->add_option("--out", eval_out, "Output points CSV (default: stdout)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Lambda sweep plus baselines");
  DataOptions sweep_data;
  TrainOptions sweep_opt;
  std::string lambdas = "0,0.003,0.01,0.03,0.1,0.3,1";
  std::string sweep_out;
  bool sweep_greedy = false;
  std::int32_t sweep_repeats = 1;
  bool no_baselines = false;
  bool quiet = false;
  add_data_options(sw, sweep_data);
  add_train_options(sw, sweep_opt, false);
  sw->add_option("--method", sweep_opt.method, "c-biirt or c-binn");
  sw->add_option("--lambda", lambdas, "Comma-separated ascending lambda values");
  sw->add_flag("--greedy", sweep_greedy, "Arg-max selection at evaluation");
  sw->add_option("--repeats", sweep_repeats, "Average each point over this many seeds");
  sw->add_flag("--no-baselines", no_baselines, "Skip IRT-Active / IRT-Random rows");
  sw->add_flag("--quiet", quiet, "No progress output");
  sw->add_option("--out", sweep_out, "Output points CSV")->required();

  // report
  auto* rep = app.add_subcommand("report", "Emit plot-ready tradeoff curves from a points CSV");
  std::string points_in;
  std::string report_prefix;
  rep->add_option("--data", points_in, "Points CSV produced by sweep/evaluate")->required();
  rep->add_option("--out", report_prefix, "Output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationExit;
  }

  if (*gen) {
    const auto data = generate_synthetic(n_students, n_questions, density, gen_seed);
    write_csv(data.dataset, gen_out);
    if (!truth_out.empty()) write_ground_truth(data.truth, truth_out);
    std::cout << "wrote " << data.dataset.num_records() << " records to " << gen_out << '\n';
  } else if (*split) {
    const auto r = parse_list(ratios_text);
    if (r.size() != 3) throw ArgumentError("--ratios needs three values");
    const auto ds = split_students(load_csv(split_data), SplitRatios{r[0], r[1], r[2]}, split_seed);
    const auto part = partition_questions(ds, split_omega, split_seed);
    write_text(split_out, format_assignment(ds, part));
    std::cout << "train " << ds.students_in(Split::train).size() << ", validation "
              << ds.students_in(Split::validation).size() << ", test " << ds.students_in(Split::test).size() << '\n';
  } else if (*trn) {
    const auto method = method_from_string(train_opt.method);
    if (!is_learned(method)) throw ArgumentError("train supports c-biirt and c-binn");
    const auto cfg = build_config(train_opt, method);
    const auto p = prepare(train_data);
    const auto result = train(p.ds, p.partition, cfg, &std::cerr);
    save_train_state(result.state, train_out);
    if (!train_log.empty()) write_text(train_log, format_epoch_log(result.log));
    std::cout << "best epoch " << result.best_epoch << ", checkpoint " << train_out << '\n';
  } else if (*ev) {
    const auto method = method_from_string(eval_method);
    auto cfg = build_config(eval_opt, is_learned(method) ? std::optional<Method>(method) : std::nullopt);
    const auto p = prepare(eval_data);
    MethodModels models;
    TrainState learned;
    IrtParams irt;
    if (is_learned(method)) {
      if (checkpoint.empty()) throw ArgumentError("--checkpoint is required for learned methods");
      learned = load_train_state(checkpoint);
      models.learned = &learned;
      models.learned_cfg = cfg;
    } else {
      irt = checkpoint.empty() ? fit_irt(p.ds, p.ds.students_in(Split::train), {}, &std::cerr).params
                               : load_irt(checkpoint);
      models.irt = &irt;
    }
    if (eval_repeats <= 0) throw ArgumentError("--repeats must be positive");
    TradeoffPoint sum;
    for (std::int32_t r = 0; r < eval_repeats; ++r) {
      const auto seed = r == 0 ? cfg.seed : derive_seed(cfg.seed, {static_cast<std::uint64_t>(r)});
      const auto res = evaluate(method, models, p.ds, p.partition, p.ds.students_in(Split::test), cfg.test_length, seed,
                                {eval_greedy ? SelectionMode::greedy : SelectionMode::stochastic});
      sum.auc += res.point.auc / eval_repeats;
      sum.expose_chi += res.point.expose_chi / eval_repeats;
      sum.overlap_mu += res.point.overlap_mu / eval_repeats;
    }
    std::optional<double> lambda;
    if (is_learned(method)) lambda = cfg.lambda;
    const SweepRow row{std::string(to_string(method)), lambda, sum};
    const auto text = format_points(std::span<const SweepRow>(&row, 1));
    if (eval_out.empty()) {
      std::cout << text;
    } else {
      write_text(eval_out, text);
    }
  } else if (*sw) {
    const auto method = method_from_string(sweep_opt.method);
    if (!is_learned(method)) throw ArgumentError("sweep supports c-biirt and c-binn");
    SweepSpec spec;
    spec.base = build_config(sweep_opt, method);
    spec.lambda_values = parse_list(lambdas);
    spec.eval_seed = derive_seed(spec.base.seed, {0xE7A1});
    spec.repeats = sweep_repeats;
    spec.greedy = sweep_greedy;
    spec.include_baselines = !no_baselines;
    const auto p = prepare(sweep_data);
    const auto rows = sweep(spec, p.ds, p.partition, quiet ? nullptr : &std::cerr);
    write_text(sweep_out, format_points(rows));
  } else if (*rep) {
    const auto rows = parse_points(read_text(points_in), points_in);
    for (const auto& path : write_report(rows, report_prefix)) std::cout << "wrote " << path.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cbobcat::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericExit;
  } catch (const cbobcat::DomainError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidationExit;
  }
}
