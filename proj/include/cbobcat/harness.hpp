#pragma once

// End-to-end experiment harness: adaptive-test episodes for every method,
// cohort evaluation into a TradeoffPoint, lambda sweeps and plot-data export.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbobcat/baselines.hpp"
#include "cbobcat/data.hpp"
#include "cbobcat/metrics.hpp"
#include "cbobcat/trainer.hpp"

namespace cbobcat {

enum class Method : std::uint8_t { c_biirt, c_binn, irt_active, irt_random };

std::string_view to_string(Method m);
Method method_from_string(std::string_view text);
bool is_learned(Method m);

/// Parameters an episode may need; only the ones the method uses must be set.
struct MethodModels {
  const TrainState* learned = nullptr;
  TrainConfig learned_cfg;
  const IrtParams* irt = nullptr;
  MapConfig map;
};

struct EvalOptions {
  SelectionMode mode = SelectionMode::stochastic;
};

/// One adaptive test of length T drawn from `pool`, responses replayed from
/// the dataset, predictions on `meta`.
EpisodeOutcome run_cat_episode(Method method, const MethodModels& models, const ResponseDataset& ds,
                               StudentId student, std::span<const QuestionId> pool, std::span<const QuestionId> meta,
                               std::int32_t test_length, Rng& rng, EvalOptions options = {});

struct EvalResult {
  Method method = Method::irt_random;
  std::vector<StudentId> students;
  std::vector<std::vector<QuestionId>> administered;
  std::vector<ScoredLabel> predictions;
  std::vector<double> step_entropies;    // learned methods: mean entropy per step
  std::vector<double> step_uniform;      // learned methods: mean log(#candidates) per step
  TradeoffPoint point;
};

/// Runs an episode per student (pool = omega, meta = gamma) with RNG stream
/// student_stream(eval_seed, student) and aggregates the metrics.
EvalResult evaluate(Method method, const MethodModels& models, const ResponseDataset& ds,
                    const InnerOuterPartition& partition, std::span<const StudentId> students,
                    std::int32_t test_length, std::uint64_t eval_seed, EvalOptions options = {});

struct SweepSpec {
  std::vector<double> lambda_values;
  TrainConfig base;  // lambda is overwritten per point
  std::uint64_t eval_seed = 0;
  std::int32_t repeats = 1;
  bool greedy = false;
  bool include_baselines = true;

  void validate() const;
};

struct SweepRow {
  std::string method;
  std::optional<double> lambda;
  TradeoffPoint point;
};

/// Trains and evaluates one model per lambda on the test students, then the
/// baselines on the same cohort. A diverging lambda is logged and skipped.
std::vector<SweepRow> sweep(const SweepSpec& spec, const ResponseDataset& ds, const InnerOuterPartition& partition,
                            std::ostream* progress = nullptr);

/// `method,lambda,auc,expose_chi,overlap_mu`; baseline rows have an empty lambda.
std::string format_points(std::span<const SweepRow> rows);
std::vector<SweepRow> parse_points(std::string_view text, std::string_view source = "<memory>");

struct PlotData {
  std::string expose;   // method,expose_chi,auc
  std::string overlap;  // method,overlap_mu,auc
};

/// One series per method, points sorted by x within each series.
PlotData report(std::span<const SweepRow> rows);

/// Writes `<prefix>_expose.csv` and `<prefix>_overlap.csv`; returns the paths.
std::vector<std::filesystem::path> write_report(std::span<const SweepRow> rows, const std::filesystem::path& prefix);

/// Split tags and omega/gamma membership as `student_id,question_id,split,part`.
std::string format_assignment(const ResponseDataset& ds, const InnerOuterPartition& partition);
/// Applies an assignment file to `ds` (sets the split) and returns the partition.
InnerOuterPartition parse_assignment(std::string_view text, ResponseDataset& ds, std::string_view source = "<memory>");

}  // namespace cbobcat
