#include "cbobcat/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cbobcat/errors.hpp"

namespace cbobcat {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
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

double parse_double(std::string_view s, const std::string& where) {
  try {
    std::size_t used = 0;
    const std::string str(s);
    const double v = std::stod(str, &used);
    if (used != str.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": not a number: '" + std::string(s) + "'");
  }
}

long long parse_int(std::string_view s, const std::string& where) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ParseError(where + ": not an integer: '" + std::string(s) + "'");
  return v;
}

const std::vector<double>& require(const ParamTable& table, const std::string& name, std::string_view source) {
  const auto it = table.find(name);
  if (it == table.end()) throw ParseError(std::string(source) + ": missing entry '" + name + "'");
  return it->second;
}

void copy_into(const ParamTable& table, const std::string& name, std::span<double> dst, std::string_view source) {
  const auto& v = require(table, name, source);
  if (v.size() != dst.size()) {
    throw ParseError(std::string(source) + ": entry '" + name + "' has " + std::to_string(v.size()) +
                     " values, expected " + std::to_string(dst.size()));
  }
  std::copy(v.begin(), v.end(), dst.begin());
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
}

std::string format_params(std::span<const ConstParamBlock> blocks) {
  std::string out = "name,index,value\n";
  for (const auto& b : blocks) {
    for (std::size_t k = 0; k < b.values.size(); ++k) {
      out += b.name;
      out += ',';
      out += std::to_string(k);
      out += ',';
      out += format_double(b.values[k]);
      out += '\n';
    }
  }
  return out;
}

ParamTable parse_params(std::string_view text, std::string_view source) {
  ParamTable table;
  bool header = false;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty()) return;
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    if (!header) {
      if (line != "name,index,value") throw ParseError(where + ": expected header 'name,index,value'");
      header = true;
      return;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
      throw ParseError(where + ": expected 3 columns");
    }
    const std::string name(line.substr(0, c1));
    const auto index = parse_int(line.substr(c1 + 1, c2 - c1 - 1), where);
    const double value = parse_double(line.substr(c2 + 1), where);
    auto& v = table[name];
    if (index < 0 || static_cast<std::size_t>(index) != v.size()) {
      throw ParseError(where + ": index " + std::to_string(index) + " out of sequence for '" + name + "'");
    }
    v.push_back(value);
  });
  if (!header) throw ParseError(std::string(source) + ": empty checkpoint");
  return table;
}

std::string format_train_state(const TrainState& state) {
  const bool neural = std::holds_alternative<NeuralResponseParams>(state.gamma);
  const double shape[] = {
      static_cast<double>(state.phi.num_questions),
      static_cast<double>(state.phi.hidden),
      neural ? 1.0 : 0.0,
      neural ? static_cast<double>(std::get<NeuralResponseParams>(state.gamma).shape.ability_dim) : 1.0,
      neural ? static_cast<double>(std::get<NeuralResponseParams>(state.gamma).shape.hidden) : 0.0,
  };
  std::vector<ConstParamBlock> all = {
      {"shape.questions", {shape + 0, 1}}, {"shape.policy_hidden", {shape + 1, 1}},
      {"shape.neural", {shape + 2, 1}},    {"shape.ability_dim", {shape + 3, 1}},
      {"shape.model_hidden", {shape + 4, 1}},
  };
  for (auto& b : state.phi.blocks()) all.push_back({"policy." + b.name, b.values});
  for (auto& b : blocks(state.gamma)) all.push_back({"model." + b.name, b.values});
  return format_params(all);
}

TrainState parse_train_state(std::string_view text, std::string_view source) {
  const auto table = parse_params(text, source);
  const auto scalar = [&](const std::string& name) {
    const auto& v = require(table, name, source);
    if (v.size() != 1) throw ParseError(std::string(source) + ": '" + name + "' must be scalar");
    return static_cast<std::int32_t>(v[0]);
  };
  const auto nq = scalar("shape.questions");
  TrainState state;
  state.phi = PolicyParams(nq, scalar("shape.policy_hidden"), 0, true);
  if (scalar("shape.neural") != 0) {
    NeuralShape shape{nq, scalar("shape.ability_dim"), scalar("shape.model_hidden")};
    state.gamma = NeuralResponseParams(shape, 0);
  } else {
    state.gamma = IrtParams(nq);
  }
  for (auto& b : state.phi.blocks()) copy_into(table, "policy." + b.name, b.values, source);
  for (auto& b : blocks(state.gamma)) copy_into(table, "model." + b.name, b.values, source);
  return state;
}

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  write_text(path, format_train_state(state));
}

TrainState load_train_state(const std::filesystem::path& path) {
  return parse_train_state(read_text(path), path.string());
}

void save_irt(const IrtParams& params, const std::filesystem::path& path) {
  std::vector<ConstParamBlock> all;
  for (auto& b : params.blocks()) all.push_back({"model." + b.name, b.values});
  write_text(path, format_params(all));
}

IrtParams load_irt(const std::filesystem::path& path) {
  const auto source = path.string();
  const auto table = parse_params(read_text(path), source);
  IrtParams params(static_cast<std::int32_t>(require(table, "model.difficulties", source).size()));
  for (auto& b : params.blocks()) copy_into(table, "model." + b.name, b.values, source);
  return params;
}

ConfigTable parse_config(std::string_view text, std::string_view source) {
  ConfigTable table;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) return;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(std::string(source) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    table[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  });
  return table;
}

ConfigTable load_config(const std::filesystem::path& path) { return parse_config(read_text(path), path.string()); }

void apply_config(ConfigTable& table, TrainConfig& cfg) {
  const auto take = [&](const char* key, auto& field) {
    const auto it = table.find(key);
    if (it == table.end()) return;
    const auto where = std::string("config key '") + key + "'";
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, double>) {
      field = parse_double(it->second, where);
    } else if constexpr (std::is_same_v<T, ModelVariant>) {
      field = variant_from_string(it->second);
    } else {
      field = static_cast<T>(parse_int(it->second, where));
    }
    table.erase(it);
  };
  take("lambda", cfg.lambda);
  take("tau", cfg.tau);
  take("test_length", cfg.test_length);
  take("inner_steps", cfg.inner_steps);
  take("inner_lr", cfg.inner_lr);
  take("rho", cfg.rho);
  take("outer_lr", cfg.outer_lr);
  take("batch_size", cfg.batch_size);
  take("epochs", cfg.epochs);
  take("seed", cfg.seed);
  take("model_variant", cfg.variant);
  take("policy_hidden", cfg.policy_hidden);
  take("ability_dim", cfg.ability_dim);
  take("model_hidden", cfg.model_hidden);
  take("workers", cfg.workers);
}

}  // namespace cbobcat
