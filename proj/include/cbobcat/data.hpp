#pragma once

// Response data: the student x question correctness records, the student
// split, the per-student inner/outer question partition and the in-progress
// test state consumed by the selection policy.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cbobcat {

using StudentId = std::int32_t;
using QuestionId = std::int32_t;

struct Response {
  QuestionId question = 0;
  std::uint8_t correct = 0;

  friend bool operator==(const Response&, const Response&) = default;
};

struct Record {
  StudentId student = 0;
  QuestionId question = 0;
  std::uint8_t correct = 0;

  friend bool operator==(const Record&, const Record&) = default;
  friend auto operator<=>(const Record&, const Record&) = default;
};

enum class Split : std::uint8_t { train, validation, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view text);

/// Sparse student x question binary responses.
///
/// Records are stored grouped by student and sorted by question id, so the
/// responses of one student form a contiguous span. Every (student, question)
/// pair occurs at most once and all ids are dense in [0, N) x [0, Q).
class ResponseDataset {
 public:
  ResponseDataset() = default;

  /// Validates ids and uniqueness; throws ArgumentError / IntegrityError.
  ResponseDataset(std::int32_t num_students, std::int32_t num_questions, std::vector<Record> records);

  std::int32_t num_students() const { return num_students_; }
  std::int32_t num_questions() const { return num_questions_; }
  std::size_t num_records() const { return records_.size(); }
  std::span<const Record> records() const { return records_; }

  /// Responses of one student, sorted by question id.
  std::span<const Response> responses_of(StudentId student) const;

  /// Recorded response of (student, question), if any.
  std::optional<std::uint8_t> response(StudentId student, QuestionId question) const;

  /// Throws IntegrityError naming the first student with fewer than `minimum` records.
  void require_min_records(std::size_t minimum) const;

  bool has_split() const { return !split_.empty(); }
  Split split_of(StudentId student) const;
  std::vector<StudentId> students_in(Split split) const;
  void set_split(std::vector<Split> tags);

  /// Original labels; defaults to the decimal dense index.
  const std::string& student_label(StudentId student) const { return student_labels_.at(student); }
  const std::string& question_label(QuestionId question) const { return question_labels_.at(question); }
  void set_labels(std::vector<std::string> students, std::vector<std::string> questions);

 private:
  std::int32_t num_students_ = 0;
  std::int32_t num_questions_ = 0;
  std::vector<Record> records_;
  std::vector<Response> responses_;
  std::vector<std::size_t> offsets_;
  std::vector<Split> split_;
  std::vector<std::string> student_labels_;
  std::vector<std::string> question_labels_;
};

/// Reads `student_id,question_id,correct` CSV. Ids are arbitrary tokens,
/// re-indexed densely in order of first appearance.
ResponseDataset load_csv(const std::filesystem::path& path);
ResponseDataset parse_csv(std::string_view text, std::string_view source = "<memory>");

void write_csv(const ResponseDataset& ds, const std::filesystem::path& path);
std::string format_csv(const ResponseDataset& ds);

struct GroundTruth {
  std::vector<double> abilities;
  std::vector<double> difficulties;
};

struct SyntheticData {
  ResponseDataset dataset;
  GroundTruth truth;
};

/// 1PL synthetic responses: abilities and difficulties ~ N(0, 1), each cell
/// kept with probability `density` and answered correctly with probability
/// sigmoid(ability - difficulty). Students left with fewer than two cells
/// receive extra random cells so the inner/outer partition is always possible.
SyntheticData generate_synthetic(std::int32_t n_students, std::int32_t n_questions, double density,
                                 std::uint64_t seed);

/// Sidecar CSV `entity,index,value`, entity in {ability, difficulty}.
void write_ground_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

/// Assigns each student one split tag. Counts are round(ratio * N) for train
/// and validation, the remainder goes to test.
ResponseDataset split_students(const ResponseDataset& ds, SplitRatios ratios, std::uint64_t seed);

/// Per-student Omega (selection pool) / Gamma (held-out meta) partition.
struct InnerOuterPartition {
  std::vector<std::vector<QuestionId>> omega;
  std::vector<std::vector<QuestionId>> gamma;
};

InnerOuterPartition partition_questions(const ResponseDataset& ds, double omega_fraction, std::uint64_t seed);

/// One student's in-progress test.
struct EpisodeState {
  StudentId student = 0;
  std::vector<QuestionId> selected;
  std::vector<std::uint8_t> responses;
  std::vector<double> input_vec;
  std::vector<double> theta;

  EpisodeState() = default;
  EpisodeState(StudentId id, std::int32_t pool_size);

  /// Appends one administered question and updates input_vec.
  void record(QuestionId question, std::uint8_t correct);
};

/// +1 for a correct selected question, -1 for an incorrect one, 0 elsewhere.
std::vector<double> encode_policy_input(const EpisodeState& state, std::int32_t pool_size);

}  // namespace cbobcat
