#include "cbobcat/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "cbobcat/errors.hpp"
#include "cbobcat/rng.hpp"

namespace cbobcat {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> decimal_labels(std::int32_t n) {
  std::vector<std::string> out(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = std::to_string(i);
  return out;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::test:
      return "test";
  }
  return "train";
}

Split split_from_string(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "validation") return Split::validation;
  if (text == "test") return Split::test;
  throw ArgumentError("unknown split tag '" + std::string(text) + "'");
}

ResponseDataset::ResponseDataset(std::int32_t num_students, std::int32_t num_questions, std::vector<Record> records)
    : num_students_(num_students), num_questions_(num_questions), records_(std::move(records)) {
  if (num_students < 0 || num_questions < 0) throw ArgumentError("negative dataset dimensions");
  for (const auto& r : records_) {
    if (r.student < 0 || r.student >= num_students || r.question < 0 || r.question >= num_questions) {
      throw ArgumentError("record id out of range: (" + std::to_string(r.student) + ", " +
                          std::to_string(r.question) + ")");
    }
    if (r.correct > 1) throw ArgumentError("non-binary response");
  }
  std::sort(records_.begin(), records_.end(), [](const Record& a, const Record& b) {
    return a.student != b.student ? a.student < b.student : a.question < b.question;
  });
  for (std::size_t k = 1; k < records_.size(); ++k) {
    if (records_[k].student == records_[k - 1].student && records_[k].question == records_[k - 1].question) {
      throw IntegrityError("duplicate record for student " + std::to_string(records_[k].student) + ", question " +
                           std::to_string(records_[k].question));
    }
  }
  offsets_.assign(static_cast<std::size_t>(num_students) + 1, 0);
  responses_.reserve(records_.size());
  for (const auto& r : records_) {
    ++offsets_[static_cast<std::size_t>(r.student) + 1];
    responses_.push_back({r.question, r.correct});
  }
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
  student_labels_ = decimal_labels(num_students);
  question_labels_ = decimal_labels(num_questions);
}

std::span<const Response> ResponseDataset::responses_of(StudentId student) const {
  if (student < 0 || student >= num_students_) throw ArgumentError("student id out of range");
  const auto s = static_cast<std::size_t>(student);
  return std::span<const Response>(responses_).subspan(offsets_[s], offsets_[s + 1] - offsets_[s]);
}

std::optional<std::uint8_t> ResponseDataset::response(StudentId student, QuestionId question) const {
  const auto rs = responses_of(student);
  const auto it = std::lower_bound(rs.begin(), rs.end(), question,
                                   [](const Response& r, QuestionId q) { return r.question < q; });
  if (it == rs.end() || it->question != question) return std::nullopt;
  return it->correct;
}

void ResponseDataset::require_min_records(std::size_t minimum) const {
  for (StudentId i = 0; i < num_students_; ++i) {
    if (responses_of(i).size() < minimum) {
      throw IntegrityError("student " + student_label(i) + " has " + std::to_string(responses_of(i).size()) +
                           " records; at least " + std::to_string(minimum) + " required");
    }
  }
}

Split ResponseDataset::split_of(StudentId student) const {
  if (split_.empty()) throw StateError("dataset has no split assignment");
  return split_.at(static_cast<std::size_t>(student));
}

std::vector<StudentId> ResponseDataset::students_in(Split split) const {
  if (split_.empty()) throw StateError("dataset has no split assignment");
  std::vector<StudentId> out;
  for (StudentId i = 0; i < num_students_; ++i) {
    if (split_[static_cast<std::size_t>(i)] == split) out.push_back(i);
  }
  return out;
}

void ResponseDataset::set_split(std::vector<Split> tags) {
  if (tags.size() != static_cast<std::size_t>(num_students_)) throw ArgumentError("split tag count mismatch");
  split_ = std::move(tags);
}

void ResponseDataset::set_labels(std::vector<std::string> students, std::vector<std::string> questions) {
  if (students.size() != static_cast<std::size_t>(num_students_) ||
      questions.size() != static_cast<std::size_t>(num_questions_)) {
    throw ArgumentError("label count mismatch");
  }
  student_labels_ = std::move(students);
  question_labels_ = std::move(questions);
}

ResponseDataset parse_csv(std::string_view text, std::string_view source) {
  std::unordered_map<std::string, StudentId> student_index;
  std::unordered_map<std::string, QuestionId> question_index;
  std::vector<std::string> student_labels;
  std::vector<std::string> question_labels;
  std::vector<Record> records;

  const auto where = [&](std::size_t line_no) { return std::string(source) + ":" + std::to_string(line_no); };

  std::size_t line_no = 0;
  bool saw_header = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (!saw_header) {
      if (fields.size() != 3 || trim(fields[0]) != "student_id" || trim(fields[1]) != "question_id" ||
          trim(fields[2]) != "correct") {
        throw ParseError(where(line_no) + ": expected header 'student_id,question_id,correct'");
      }
      saw_header = true;
      continue;
    }
    if (fields.size() != 3) {
      throw ParseError(where(line_no) + ": expected 3 columns, got " + std::to_string(fields.size()) + " in '" +
                       std::string(line) + "'");
    }
    const auto s = trim(fields[0]);
    const auto q = trim(fields[1]);
    const auto c = trim(fields[2]);
    if (s.empty() || q.empty()) throw ParseError(where(line_no) + ": empty id in '" + std::string(line) + "'");
    if (c != "0" && c != "1") {
      throw ParseError(where(line_no) + ": correct must be 0 or 1 in '" + std::string(line) + "'");
    }
    auto [sit, s_new] = student_index.try_emplace(std::string(s), static_cast<StudentId>(student_labels.size()));
    if (s_new) student_labels.emplace_back(s);
    auto [qit, q_new] = question_index.try_emplace(std::string(q), static_cast<QuestionId>(question_labels.size()));
    if (q_new) question_labels.emplace_back(q);
    records.push_back({sit->second, qit->second, static_cast<std::uint8_t>(c == "1")});
  }
  if (!saw_header) throw ParseError(std::string(source) + ": empty file");

  ResponseDataset ds(static_cast<std::int32_t>(student_labels.size()),
                     static_cast<std::int32_t>(question_labels.size()), std::move(records));
  ds.set_labels(std::move(student_labels), std::move(question_labels));
  return ds;
}

ResponseDataset load_csv(const std::filesystem::path& path) {
  auto ds = parse_csv(read_file(path), path.string());
  ds.require_min_records(2);
  return ds;
}

std::string format_csv(const ResponseDataset& ds) {
  std::string out = "student_id,question_id,correct\n";
  for (const auto& r : ds.records()) {
    out += ds.student_label(r.student);
    out += ',';
    out += ds.question_label(r.question);
    out += r.correct ? ",1\n" : ",0\n";
  }
  return out;
}

void write_csv(const ResponseDataset& ds, const std::filesystem::path& path) { write_file(path, format_csv(ds)); }

SyntheticData generate_synthetic(std::int32_t n_students, std::int32_t n_questions, double density,
                                 std::uint64_t seed) {
  if (n_students < 2 || n_questions < 2) throw ArgumentError("synthetic data needs at least 2 students and 2 questions");
  if (!(density > 0.0 && density <= 1.0)) throw ArgumentError("density must lie in (0, 1]");

  Rng rng(seed);
  GroundTruth truth;
  truth.abilities.resize(static_cast<std::size_t>(n_students));
  truth.difficulties.resize(static_cast<std::size_t>(n_questions));
  for (auto& a : truth.abilities) a = rng.normal();
  for (auto& b : truth.difficulties) b = rng.normal();

  const auto draw = [&](StudentId i, QuestionId j) {
    const double logit = truth.abilities[static_cast<std::size_t>(i)] - truth.difficulties[static_cast<std::size_t>(j)];
    const double p = 1.0 / (1.0 + std::exp(-logit));
    return Record{i, j, static_cast<std::uint8_t>(rng.uniform() < p)};
  };

  std::vector<Record> records;
  records.reserve(static_cast<std::size_t>(static_cast<double>(n_students) * n_questions * density) + 16);
  std::vector<std::uint8_t> kept(static_cast<std::size_t>(n_questions));
  for (StudentId i = 0; i < n_students; ++i) {
    std::fill(kept.begin(), kept.end(), 0);
    int count = 0;
    for (QuestionId j = 0; j < n_questions; ++j) {
      if (density >= 1.0 || rng.uniform() < density) {
        kept[static_cast<std::size_t>(j)] = 1;
        ++count;
        records.push_back(draw(i, j));
      }
    }
    while (count < 2) {
      const auto j = static_cast<QuestionId>(rng.below(static_cast<std::uint64_t>(n_questions)));
      if (kept[static_cast<std::size_t>(j)]) continue;
      kept[static_cast<std::size_t>(j)] = 1;
      ++count;
      records.push_back(draw(i, j));
    }
  }
  return {ResponseDataset(n_students, n_questions, std::move(records)), std::move(truth)};
}

void write_ground_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "entity,index,value\n";
  for (std::size_t i = 0; i < truth.abilities.size(); ++i) out << "ability," << i << ',' << truth.abilities[i] << '\n';
  for (std::size_t j = 0; j < truth.difficulties.size(); ++j) {
    out << "difficulty," << j << ',' << truth.difficulties[j] << '\n';
  }
  write_file(path, out.str());
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  const auto text = read_file(path);
  std::istringstream in(text);
  std::string line;
  GroundTruth truth;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || line_no == 1) continue;
    const auto f = split_fields(t);
    if (f.size() != 3) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    const auto index = static_cast<std::size_t>(std::stoul(std::string(f[1])));
    const double value = std::stod(std::string(f[2]));
    auto& target = f[0] == "ability" ? truth.abilities : truth.difficulties;
    if (f[0] != "ability" && f[0] != "difficulty") {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": unknown entity");
    }
    if (target.size() <= index) target.resize(index + 1);
    target[index] = value;
  }
  return truth;
}

ResponseDataset split_students(const ResponseDataset& ds, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0.0 || ratios.validation < 0.0 || ratios.test < 0.0) {
    throw ArgumentError("split ratios must be non-negative");
  }
  if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw ArgumentError("split ratios must sum to 1");
  }
  const auto n = ds.num_students();
  const auto n_train = static_cast<std::int32_t>(std::lround(ratios.train * n));
  const auto n_val = std::min(n - n_train, static_cast<std::int32_t>(std::lround(ratios.validation * n)));

  std::vector<StudentId> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x5B117}));
  rng.shuffle(order);

  std::vector<Split> tags(static_cast<std::size_t>(n), Split::test);
  for (std::int32_t k = 0; k < n; ++k) {
    const auto student = static_cast<std::size_t>(order[static_cast<std::size_t>(k)]);
    tags[student] = k < n_train ? Split::train : (k < n_train + n_val ? Split::validation : Split::test);
  }
  ResponseDataset out = ds;
  out.set_split(std::move(tags));
  return out;
}

InnerOuterPartition partition_questions(const ResponseDataset& ds, double omega_fraction, std::uint64_t seed) {
  if (!(omega_fraction > 0.0 && omega_fraction < 1.0)) throw ArgumentError("omega fraction must lie in (0, 1)");
  InnerOuterPartition part;
  part.omega.resize(static_cast<std::size_t>(ds.num_students()));
  part.gamma.resize(static_cast<std::size_t>(ds.num_students()));
  for (StudentId i = 0; i < ds.num_students(); ++i) {
    const auto rs = ds.responses_of(i);
    if (rs.size() < 2) {
      throw IntegrityError("student " + ds.student_label(i) + " has fewer than 2 records; cannot partition");
    }
    std::vector<QuestionId> qs;
    qs.reserve(rs.size());
    for (const auto& r : rs) qs.push_back(r.question);
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    rng.shuffle(qs);
    const auto n = static_cast<std::int64_t>(qs.size());
    const auto n_omega = std::clamp<std::int64_t>(std::llround(omega_fraction * static_cast<double>(n)), 1, n - 1);
    auto& omega = part.omega[static_cast<std::size_t>(i)];
    auto& gamma = part.gamma[static_cast<std::size_t>(i)];
    omega.assign(qs.begin(), qs.begin() + n_omega);
    gamma.assign(qs.begin() + n_omega, qs.end());
    std::sort(omega.begin(), omega.end());
    std::sort(gamma.begin(), gamma.end());
  }
  return part;
}

EpisodeState::EpisodeState(StudentId id, std::int32_t pool_size)
    : student(id), input_vec(static_cast<std::size_t>(pool_size), 0.0) {}

void EpisodeState::record(QuestionId question, std::uint8_t correct) {
  if (question < 0 || static_cast<std::size_t>(question) >= input_vec.size()) {
    throw ArgumentError("question id out of range");
  }
  if (std::find(selected.begin(), selected.end(), question) != selected.end()) {
    throw StateError("question " + std::to_string(question) + " already administered");
  }
  selected.push_back(question);
  responses.push_back(correct);
  input_vec[static_cast<std::size_t>(question)] = correct ? 1.0 : -1.0;
}

std::vector<double> encode_policy_input(const EpisodeState& state, std::int32_t pool_size) {
  std::vector<double> v(static_cast<std::size_t>(pool_size), 0.0);
  for (std::size_t t = 0; t < state.selected.size(); ++t) {
    v.at(static_cast<std::size_t>(state.selected[t])) = state.responses[t] ? 1.0 : -1.0;
  }
  return v;
}

}  // namespace cbobcat
