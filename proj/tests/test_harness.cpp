#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "cbobcat/checkpoint.hpp"
#include "cbobcat/errors.hpp"
#include "cbobcat/harness.hpp"

using namespace cbobcat;

namespace {

struct Fixture {
  ResponseDataset ds;
  InnerOuterPartition part;
  IrtParams irt;
  TrainState learned;
  TrainConfig cfg;

  explicit Fixture(std::int32_t n = 60, std::int32_t q = 25, double density = 1.0) {
    ds = split_students(generate_synthetic(n, q, density, 3).dataset, {}, 3);
    part = partition_questions(ds, 0.8, 3);
    std::vector<StudentId> train = ds.students_in(Split::train);
    irt = fit_irt(ds, train).params;
    cfg.test_length = 4;
    cfg.policy_hidden = 16;
    learned = initial_state(q, cfg);
  }

  MethodModels models() const {
    MethodModels m;
    m.irt = &irt;
    m.learned = &learned;
    m.learned_cfg = cfg;
    return m;
  }
};

const Method all_methods[] = {Method::c_biirt, Method::irt_active, Method::irt_random};

}  // namespace

TEST_CASE("method names") {
  for (auto m : {Method::c_biirt, Method::c_binn, Method::irt_active, Method::irt_random}) {
    CHECK(method_from_string(to_string(m)) == m);
  }
  CHECK(is_learned(Method::c_binn));
  CHECK_FALSE(is_learned(Method::irt_random));
  CHECK_THROWS_AS(method_from_string("bobcat"), ArgumentError);
}

TEST_CASE("run_cat_episode degenerate lengths") {
  const Fixture f;
  const auto models = f.models();
  const StudentId s = f.ds.students_in(Split::test).front();
  const auto& pool = f.part.omega[static_cast<std::size_t>(s)];
  const auto& meta = f.part.gamma[static_cast<std::size_t>(s)];
  for (auto m : all_methods) {
    CAPTURE(to_string(m));
    Rng rng(1);
    const auto none = run_cat_episode(m, models, f.ds, s, pool, meta, 0, rng);
    CHECK(none.administered.empty());
    const double prior = is_learned(m) ? std::get<IrtParams>(f.learned.gamma).prior_mean : 0.0;
    CHECK(none.theta.value[0] == prior);
    REQUIRE(none.meta_predictions.size() == meta.size());
    const auto& gamma_model = is_learned(m) ? std::get<IrtParams>(f.learned.gamma) : f.irt;
    CHECK(none.meta_predictions[0].score == predict_prob(gamma_model, Ability::scalar(prior), meta[0]));

    const auto full = run_cat_episode(m, models, f.ds, s, pool, meta, static_cast<std::int32_t>(pool.size()), rng);
    std::vector<QuestionId> got = full.administered;
    std::sort(got.begin(), got.end());
    CHECK(got == pool);

    CHECK_THROWS_AS(run_cat_episode(m, models, f.ds, s, pool, meta, static_cast<std::int32_t>(pool.size()) + 1, rng),
                    StateError);
  }
}

TEST_CASE("evaluate is deterministic and administers T distinct pool questions") {
  const Fixture f;
  const auto models = f.models();
  const auto test = f.ds.students_in(Split::test);
  for (auto m : all_methods) {
    const auto a = evaluate(m, models, f.ds, f.part, test, 4, 9);
    const auto b = evaluate(m, models, f.ds, f.part, test, 4, 9);
    CHECK(a.administered == b.administered);
    CHECK(a.point.auc == b.point.auc);
    CHECK(a.point.expose_chi == b.point.expose_chi);
    for (std::size_t k = 0; k < test.size(); ++k) {
      const auto& set = a.administered[k];
      CHECK(std::set<QuestionId>(set.begin(), set.end()).size() == 4);
      const auto& pool = f.part.omega[static_cast<std::size_t>(test[k])];
      for (auto q : set) CHECK(std::binary_search(pool.begin(), pool.end(), q));
    }
    CHECK(a.point.auc >= 0.0);
    CHECK(a.point.auc <= 1.0);
    CHECK(a.point.overlap_mu >= 0.0);
    CHECK(a.point.overlap_mu <= 1.0);
  }
  const auto learned = evaluate(Method::c_biirt, models, f.ds, f.part, test, 4, 9);
  REQUIRE(learned.step_entropies.size() == 4);
  for (std::size_t t = 0; t < 4; ++t) CHECK(learned.step_entropies[t] <= learned.step_uniform[t] + 1e-9);
}

TEST_CASE("random selection spreads exposure more than active selection") {
  const Fixture f(2500, 40, 1.0);
  const auto models = f.models();
  const auto test = f.ds.students_in(Split::test);
  REQUIRE(test.size() >= 500);
  const auto active = evaluate(Method::irt_active, models, f.ds, f.part, test, 5, 2);
  const auto random = evaluate(Method::irt_random, models, f.ds, f.part, test, 5, 2);
  CHECK(random.point.expose_chi < active.point.expose_chi);
  CHECK(random.point.overlap_mu < active.point.overlap_mu);
}

TEST_CASE("active selection opens every test with the same question when pools coincide") {
  // Full density and a full-pool availability rule: every student shares the
  // initial state, so the first arg-max is shared too.
  const Fixture f(40, 12, 1.0);
  auto models = f.models();
  std::vector<QuestionId> pool(12);
  std::iota(pool.begin(), pool.end(), 0);
  std::set<QuestionId> first;
  for (StudentId s = 0; s < f.ds.num_students(); ++s) {
    Rng rng(0);
    const std::vector<QuestionId> meta{0};
    first.insert(run_cat_episode(Method::irt_active, models, f.ds, s, pool, meta, 3, rng).administered.front());
  }
  CHECK(first.size() == 1);
}

TEST_CASE("single-student cohorts have no overlap") {
  const Fixture f;
  const std::vector<StudentId> one{f.ds.students_in(Split::test).front()};
  CHECK_THROWS_AS(evaluate(Method::irt_random, f.models(), f.ds, f.part, one, 3, 0), UndefinedMetricError);
}

TEST_CASE("learned methods need a matching checkpoint") {
  const Fixture f;
  auto models = f.models();
  const StudentId s = 0;
  Rng rng(0);
  CHECK_THROWS_AS(run_cat_episode(Method::c_binn, models, f.ds, s, f.part.omega[0], f.part.gamma[0], 2, rng),
                  ArgumentError);
  models.irt = nullptr;
  CHECK_THROWS_AS(run_cat_episode(Method::irt_active, models, f.ds, s, f.part.omega[0], f.part.gamma[0], 2, rng),
                  ArgumentError);
}

TEST_CASE("sweep rows and determinism") {
  const Fixture f(80, 15, 1.0);
  SweepSpec spec;
  spec.lambda_values = {0.0, 1.0};
  spec.base.test_length = 3;
  spec.base.epochs = 1;
  spec.base.policy_hidden = 8;
  spec.base.batch_size = 16;
  spec.eval_seed = 5;
  const auto rows = sweep(spec, f.ds, f.part);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].method == "c-biirt");
  CHECK(rows[1].lambda == std::optional<double>{1.0});
  CHECK(rows[2].method == "irt-active");
  CHECK_FALSE(rows[3].lambda.has_value());
  CHECK(format_points(sweep(spec, f.ds, f.part)) == format_points(rows));

  spec.include_baselines = false;
  spec.lambda_values = {0.0};
  CHECK(sweep(spec, f.ds, f.part).size() == 1);
  spec.lambda_values = {1.0, 0.0};
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
  spec.lambda_values = {};
  CHECK_THROWS_AS(spec.validate(), ArgumentError);
}

TEST_CASE("points CSV round trip") {
  std::vector<SweepRow> rows{{"c-biirt", 0.0, {0.0, 0.75, 3.5, 0.125}},
                             {"c-biirt", 0.1, {0.1, 0.7, 0.25, 0.0625}},
                             {"irt-random", std::nullopt, {0.0, 0.65, 0.1, 0.05}}};
  const auto text = format_points(rows);
  CHECK(text.rfind("method,lambda,auc,expose_chi,overlap_mu\n", 0) == 0);
  CHECK(text.find("irt-random,,0.65,") != std::string::npos);
  const auto back = parse_points(text);
  REQUIRE(back.size() == 3);
  CHECK(back[1].lambda == std::optional<double>{0.1});
  CHECK(back[1].point.overlap_mu == 0.0625);
  CHECK_FALSE(back[2].lambda.has_value());
  CHECK_THROWS_AS(parse_points("method,lambda,auc,expose_chi,overlap_mu\nc-biirt,0,x,1,1\n"), ParseError);
}

TEST_CASE("report groups series and sorts by x") {
  std::vector<SweepRow> rows;
  const double chis[] = {3.0, 1.0, 4.0, 0.5, 2.0};
  for (int k = 0; k < 5; ++k) rows.push_back({"c-biirt", 0.1 * k, {0.1 * k, 0.7 - 0.01 * k, chis[k], 0.2 - 0.01 * k}});
  rows.push_back({"irt-active", std::nullopt, {0.0, 0.72, 6.0, 0.3}});
  rows.push_back({"irt-random", std::nullopt, {0.0, 0.69, 0.2, 0.05}});
  const auto plot = report(rows);

  std::istringstream in(plot.expose);
  std::string line;
  std::getline(in, line);
  CHECK(line == "method,expose_chi,auc");
  std::vector<std::pair<std::string, double>> seen;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    seen.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
  }
  REQUIRE(seen.size() == 7);
  std::set<std::string> series;
  for (std::size_t k = 0; k < seen.size(); ++k) {
    series.insert(seen[k].first);
    if (k > 0 && seen[k].first == seen[k - 1].first) CHECK(seen[k].second >= seen[k - 1].second);
  }
  CHECK(series.size() == 3);
  CHECK(seen.front() == std::pair<std::string, double>{"c-biirt", 0.5});
  CHECK(plot.overlap.rfind("method,overlap_mu,auc\n", 0) == 0);

  const std::vector<SweepRow> single{rows.front()};
  const auto one = report(single);
  CHECK(std::count(one.expose.begin(), one.expose.end(), '\n') == 2);
  CHECK_THROWS_AS(report(std::vector<SweepRow>{}), ArgumentError);

  const auto prefix = std::filesystem::temp_directory_path() / "cbobcat_plot";
  const auto files = write_report(rows, prefix);
  CHECK(files.size() == 2);
  for (const auto& p : files) {
    CHECK(std::filesystem::exists(p));
    std::filesystem::remove(p);
  }
}

TEST_CASE("assignment files restore the split and partition") {
  const Fixture f(30, 10, 0.7);
  const auto text = format_assignment(f.ds, f.part);
  auto fresh = generate_synthetic(30, 10, 0.7, 3).dataset;
  const auto part = parse_assignment(text, fresh);
  CHECK(part.omega == f.part.omega);
  CHECK(part.gamma == f.part.gamma);
  CHECK(fresh.students_in(Split::test) == f.ds.students_in(Split::test));
}

TEST_CASE("train-state checkpoints round trip exactly") {
  TrainConfig cfg;
  cfg.policy_hidden = 6;
  for (auto variant : {ModelVariant::irt, ModelVariant::neural}) {
    cfg.variant = variant;
    cfg.model_hidden = 5;
    cfg.ability_dim = 3;
    auto state = initial_state(7, cfg);
    if (auto* irt = std::get_if<IrtParams>(&state.gamma)) {
      irt->difficulties[3] = 0.1 + 1e-17;
      irt->prior_mean = -1.0 / 3.0;
    }
    const auto back = parse_train_state(format_train_state(state));
    CHECK(back.phi.w1 == state.phi.w1);
    CHECK(back.phi.b2 == state.phi.b2);
    CHECK(back.phi.hidden == 6);
    CHECK(format_train_state(back) == format_train_state(state));
  }
  CHECK_THROWS_AS(parse_train_state("name,index,value\npolicy.w1,0,1\n"), ParseError);
}

TEST_CASE("IRT checkpoints and config files") {
  IrtParams p;
  p.difficulties = {0.25, -1.5, 2.0 / 3.0};
  p.prior_mean = 0.125;
  const auto path = std::filesystem::temp_directory_path() / "cbobcat_irt.csv";
  save_irt(p, path);
  const auto back = load_irt(path);
  std::filesystem::remove(path);
  CHECK(back.difficulties == p.difficulties);
  CHECK(back.prior_mean == p.prior_mean);

  auto table = parse_config("# sweep settings\nlambda = 0.3\n tau=0.5 \nepochs = 7\nmodel_variant = neural\nomega = 0.8\n");
  TrainConfig cfg;
  apply_config(table, cfg);
  CHECK(cfg.lambda == 0.3);
  CHECK(cfg.tau == 0.5);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.variant == ModelVariant::neural);
  CHECK(table.size() == 1);
  CHECK(table.count("omega") == 1);
  CHECK_THROWS_AS(parse_config("lambda 0.3\n"), ParseError);
  auto bad = parse_config("epochs = many\n");
  CHECK_THROWS(apply_config(bad, cfg));
}
