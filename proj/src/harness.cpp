#include "cbobcat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "cbobcat/checkpoint.hpp"
#include "cbobcat/errors.hpp"

namespace cbobcat {

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> fields_of(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    fn(++line_no, trim(text.substr(pos, end - pos)));
    pos = end + 1;
  }
}

double to_double(std::string_view s, const std::string& where) {
  try {
    std::size_t used = 0;
    const std::string str(s);
    const double v = std::stod(str, &used);
    if (used != str.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": not a number: '" + std::string(s) + "'");
  }
}

TradeoffPoint mean_point(std::span<const TradeoffPoint> points) {
  TradeoffPoint m;
  for (const auto& p : points) {
    m.auc += p.auc;
    m.expose_chi += p.expose_chi;
    m.overlap_mu += p.overlap_mu;
  }
  const double n = static_cast<double>(points.size());
  m.auc /= n;
  m.expose_chi /= n;
  m.overlap_mu /= n;
  m.lambda = points.empty() ? 0.0 : points.front().lambda;
  return m;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::c_biirt:
      return "c-biirt";
    case Method::c_binn:
      return "c-binn";
    case Method::irt_active:
      return "irt-active";
    case Method::irt_random:
      return "irt-random";
  }
  return "irt-random";
}

Method method_from_string(std::string_view text) {
  if (text == "c-biirt") return Method::c_biirt;
  if (text == "c-binn") return Method::c_binn;
  if (text == "irt-active") return Method::irt_active;
  if (text == "irt-random") return Method::irt_random;
  throw ArgumentError("unknown method '" + std::string(text) + "'");
}

bool is_learned(Method m) { return m == Method::c_biirt || m == Method::c_binn; }

EpisodeOutcome run_cat_episode(Method method, const MethodModels& models, const ResponseDataset& ds,
                               StudentId student, std::span<const QuestionId> pool, std::span<const QuestionId> meta,
                               std::int32_t test_length, Rng& rng, EvalOptions options) {
  if (test_length < 0) throw ArgumentError("negative test length");
  if (static_cast<std::size_t>(test_length) > pool.size()) {
    throw StateError("pool of student " + ds.student_label(student) + " exhausted: " + std::to_string(pool.size()) +
                     " questions for a test of length " + std::to_string(test_length));
  }
  if (meta.empty()) throw StateError("student " + ds.student_label(student) + " has no held-out responses");

  if (is_learned(method)) {
    if (!models.learned) throw ArgumentError("learned method requires trained parameters");
    const bool neural = std::holds_alternative<NeuralResponseParams>(models.learned->gamma);
    if (neural != (method == Method::c_binn)) throw ArgumentError("checkpoint does not match method");
    TrainConfig cfg = models.learned_cfg;
    cfg.test_length = test_length;
    return run_learned_episode(models.learned->phi, models.learned->gamma, ds, student, pool, meta, cfg, rng,
                               options.mode);
  }

  if (!models.irt) throw ArgumentError("baseline requires fitted IRT parameters");
  const auto& irt = *models.irt;
  std::vector<std::uint8_t> available(static_cast<std::size_t>(irt.num_questions()), 0);
  for (auto q : pool) available.at(static_cast<std::size_t>(q)) = 1;

  EpisodeOutcome out;
  std::vector<Response> answered;
  Ability theta = Ability::scalar(models.map.prior_mean);
  for (std::int32_t t = 0; t < test_length; ++t) {
    const auto q = method == Method::irt_active ? select_active(irt, theta, available) : select_random(available, rng);
    available[static_cast<std::size_t>(q)] = 0;
    const auto y = ds.response(student, q);
    if (!y) throw IntegrityError("administered question has no recorded response");
    answered.push_back({q, *y});
    out.administered.push_back(q);
    theta = map_estimate_theta(irt, answered, models.map);
  }
  out.theta = theta;
  for (auto q : meta) out.meta_predictions.push_back({predict_prob(irt, theta, q), *ds.response(student, q)});
  return out;
}

EvalResult evaluate(Method method, const MethodModels& models, const ResponseDataset& ds,
                    const InnerOuterPartition& partition, std::span<const StudentId> students,
                    std::int32_t test_length, std::uint64_t eval_seed, EvalOptions options) {
  if (students.empty()) throw ArgumentError("empty evaluation cohort");
  EvalResult result;
  result.method = method;
  result.students.assign(students.begin(), students.end());
  result.step_entropies.assign(static_cast<std::size_t>(test_length), 0.0);
  result.step_uniform.assign(static_cast<std::size_t>(test_length), 0.0);
  for (auto s : students) {
    Rng rng(student_stream(eval_seed, s));
    const auto idx = static_cast<std::size_t>(s);
    auto ep = run_cat_episode(method, models, ds, s, partition.omega.at(idx), partition.gamma.at(idx), test_length, rng,
                              options);
    for (std::size_t t = 0; t < ep.step_entropies.size(); ++t) {
      result.step_entropies[t] += ep.step_entropies[t] / static_cast<double>(students.size());
      result.step_uniform[t] += std::log(static_cast<double>(ep.step_candidates[t])) /
                                static_cast<double>(students.size());
    }
    result.administered.push_back(std::move(ep.administered));
    result.predictions.insert(result.predictions.end(), ep.meta_predictions.begin(), ep.meta_predictions.end());
  }
  if (!is_learned(method)) {
    result.step_entropies.clear();
    result.step_uniform.clear();
  }
  result.point.lambda = is_learned(method) ? models.learned_cfg.lambda : 0.0;
  result.point.auc = auc(result.predictions);
  result.point.expose_chi = expose_chi(exposure_from_administrations(result.administered, ds.num_questions()));
  result.point.overlap_mu = overlap_mu(result.administered, test_length);
  return result;
}

void SweepSpec::validate() const {
  if (lambda_values.empty()) throw ArgumentError("sweep needs at least one lambda value");
  for (std::size_t k = 0; k < lambda_values.size(); ++k) {
    if (!(lambda_values[k] >= 0.0)) throw ArgumentError("lambda values must be non-negative");
    if (k > 0 && lambda_values[k] < lambda_values[k - 1]) throw ArgumentError("lambda values must be sorted ascending");
  }
  if (repeats <= 0) throw ArgumentError("repeats must be positive");
  base.validate();
}

std::vector<SweepRow> sweep(const SweepSpec& spec, const ResponseDataset& ds, const InnerOuterPartition& partition,
                            std::ostream* progress) {
  spec.validate();
  const auto test_students = ds.students_in(Split::test);
  const auto method = spec.base.variant == ModelVariant::irt ? Method::c_biirt : Method::c_binn;
  const EvalOptions options{spec.greedy ? SelectionMode::greedy : SelectionMode::stochastic};
  const auto repeat_seed = [&](std::uint64_t base, std::int32_t r) {
    return r == 0 ? base : derive_seed(base, {static_cast<std::uint64_t>(r)});
  };

  std::vector<SweepRow> rows;
  for (const double lambda : spec.lambda_values) {
    std::vector<TradeoffPoint> points;
    try {
      for (std::int32_t r = 0; r < spec.repeats; ++r) {
        TrainConfig cfg = spec.base;
        cfg.lambda = lambda;
        cfg.seed = repeat_seed(spec.base.seed, r);
        const auto trained = train(ds, partition, cfg);
        MethodModels models;
        models.learned = &trained.state;
        models.learned_cfg = cfg;
        const auto res = evaluate(method, models, ds, partition, test_students, cfg.test_length,
                                  repeat_seed(spec.eval_seed, r), options);
        points.push_back(res.point);
      }
    } catch (const NumericError& e) {
      if (progress) *progress << "lambda " << lambda << ": skipped (" << e.what() << ")\n";
      continue;
    }
    const auto p = mean_point(points);
    if (progress) {
      *progress << to_string(method) << " lambda " << lambda << ": auc " << p.auc << " expose_chi " << p.expose_chi
                << " overlap_mu " << p.overlap_mu << '\n';
    }
    rows.push_back({std::string(to_string(method)), lambda, p});
  }

  if (spec.include_baselines) {
    const auto fit = fit_irt(ds, ds.students_in(Split::train), {}, progress);
    MethodModels models;
    models.irt = &fit.params;
    for (const auto baseline : {Method::irt_active, Method::irt_random}) {
      std::vector<TradeoffPoint> points;
      for (std::int32_t r = 0; r < spec.repeats; ++r) {
        points.push_back(evaluate(baseline, models, ds, partition, test_students, spec.base.test_length,
                                  repeat_seed(spec.eval_seed, r), options)
                             .point);
      }
      const auto p = mean_point(points);
      if (progress) {
        *progress << to_string(baseline) << ": auc " << p.auc << " expose_chi " << p.expose_chi << " overlap_mu "
                  << p.overlap_mu << '\n';
      }
      rows.push_back({std::string(to_string(baseline)), std::nullopt, p});
    }
  }
  return rows;
}

std::string format_points(std::span<const SweepRow> rows) {
  std::string out = "method,lambda,auc,expose_chi,overlap_mu\n";
  for (const auto& r : rows) {
    out += r.method + ',' + (r.lambda ? format_number(*r.lambda) : std::string()) + ',' + format_number(r.point.auc) +
           ',' + format_number(r.point.expose_chi) + ',' + format_number(r.point.overlap_mu) + '\n';
  }
  return out;
}

std::vector<SweepRow> parse_points(std::string_view text, std::string_view source) {
  std::vector<SweepRow> rows;
  bool header = false;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    if (!header) {
      if (line != "method,lambda,auc,expose_chi,overlap_mu") {
        throw ParseError(where + ": expected header 'method,lambda,auc,expose_chi,overlap_mu'");
      }
      header = true;
      return;
    }
    const auto f = fields_of(line);
    if (f.size() != 5) throw ParseError(where + ": expected 5 columns");
    SweepRow row;
    row.method = std::string(f[0]);
    if (row.method.empty()) throw ParseError(where + ": empty method");
    if (!f[1].empty()) row.lambda = to_double(f[1], where);
    row.point.lambda = row.lambda.value_or(0.0);
    row.point.auc = to_double(f[2], where);
    row.point.expose_chi = to_double(f[3], where);
    row.point.overlap_mu = to_double(f[4], where);
    rows.push_back(std::move(row));
  });
  if (!header) throw ArgumentError(std::string(source) + ": empty points file");
  return rows;
}

PlotData report(std::span<const SweepRow> rows) {
  if (rows.empty()) throw ArgumentError("report needs at least one point");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const SweepRow*>> series;
  for (const auto& r : rows) {
    if (!series.count(r.method)) order.push_back(r.method);
    series[r.method].push_back(&r);
  }
  const auto emit = [&](const char* header, double TradeoffPoint::*x) {
    std::string out = header;
    for (const auto& name : order) {
      auto pts = series[name];
      std::stable_sort(pts.begin(), pts.end(),
                       [&](const SweepRow* a, const SweepRow* b) { return a->point.*x < b->point.*x; });
      for (const auto* p : pts) out += name + ',' + format_number(p->point.*x) + ',' + format_number(p->point.auc) + '\n';
    }
    return out;
  };
  return {emit("method,expose_chi,auc\n", &TradeoffPoint::expose_chi),
          emit("method,overlap_mu,auc\n", &TradeoffPoint::overlap_mu)};
}

std::vector<std::filesystem::path> write_report(std::span<const SweepRow> rows, const std::filesystem::path& prefix) {
  const auto data = report(rows);
  const std::filesystem::path expose = prefix.string() + "_expose.csv";
  const std::filesystem::path overlap = prefix.string() + "_overlap.csv";
  write_text(expose, data.expose);
  write_text(overlap, data.overlap);
  return {expose, overlap};
}

std::string format_assignment(const ResponseDataset& ds, const InnerOuterPartition& partition) {
  std::string out = "student_id,question_id,split,part\n";
  for (StudentId s = 0; s < ds.num_students(); ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const auto split = to_string(ds.split_of(s));
    std::vector<std::pair<QuestionId, const char*>> rows;
    for (auto q : partition.omega.at(idx)) rows.emplace_back(q, "omega");
    for (auto q : partition.gamma.at(idx)) rows.emplace_back(q, "gamma");
    std::sort(rows.begin(), rows.end());
    for (const auto& [q, part] : rows) {
      out += ds.student_label(s) + ',' + ds.question_label(q) + ',' + std::string(split) + ',' + part + '\n';
    }
  }
  return out;
}

InnerOuterPartition parse_assignment(std::string_view text, ResponseDataset& ds, std::string_view source) {
  std::unordered_map<std::string, StudentId> students;
  std::unordered_map<std::string, QuestionId> questions;
  for (StudentId s = 0; s < ds.num_students(); ++s) students.emplace(ds.student_label(s), s);
  for (QuestionId q = 0; q < ds.num_questions(); ++q) questions.emplace(ds.question_label(q), q);

  InnerOuterPartition part;
  part.omega.resize(static_cast<std::size_t>(ds.num_students()));
  part.gamma.resize(static_cast<std::size_t>(ds.num_students()));
  std::vector<int> tags(static_cast<std::size_t>(ds.num_students()), -1);
  bool header = false;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    if (!header) {
      if (line != "student_id,question_id,split,part") {
        throw ParseError(where + ": expected header 'student_id,question_id,split,part'");
      }
      header = true;
      return;
    }
    const auto f = fields_of(line);
    if (f.size() != 4) throw ParseError(where + ": expected 4 columns");
    const auto s = students.find(std::string(f[0]));
    const auto q = questions.find(std::string(f[1]));
    if (s == students.end() || q == questions.end()) throw IntegrityError(where + ": unknown student or question id");
    if (!ds.response(s->second, q->second)) throw IntegrityError(where + ": no recorded response for this pair");
    const auto tag = static_cast<int>(split_from_string(f[2]));
    auto& current = tags[static_cast<std::size_t>(s->second)];
    if (current >= 0 && current != tag) throw IntegrityError(where + ": student assigned to two splits");
    current = tag;
    if (f[3] == "omega") {
      part.omega[static_cast<std::size_t>(s->second)].push_back(q->second);
    } else if (f[3] == "gamma") {
      part.gamma[static_cast<std::size_t>(s->second)].push_back(q->second);
    } else {
      throw ParseError(where + ": part must be omega or gamma");
    }
  });
  std::vector<Split> splits(tags.size());
  for (std::size_t s = 0; s < tags.size(); ++s) {
    const auto n = ds.responses_of(static_cast<StudentId>(s)).size();
    if (tags[s] < 0 || part.omega[s].empty() || part.gamma[s].empty() ||
        part.omega[s].size() + part.gamma[s].size() != n) {
      throw IntegrityError(std::string(source) + ": incomplete assignment for student " +
                           ds.student_label(static_cast<StudentId>(s)));
    }
    std::sort(part.omega[s].begin(), part.omega[s].end());
    std::sort(part.gamma[s].begin(), part.gamma[s].end());
    splits[s] = static_cast<Split>(tags[s]);
  }
  ds.set_split(std::move(splits));
  return part;
}

}  // namespace cbobcat
