#pragma once

// Plain-text persistence: parameter checkpoints as `name,index,value` CSV and
// training configuration as `key = value` lines.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cbobcat/response_model.hpp"
#include "cbobcat/trainer.hpp"

namespace cbobcat {

using ParamTable = std::map<std::string, std::vector<double>>;

std::string format_params(std::span<const ConstParamBlock> blocks);
ParamTable parse_params(std::string_view text, std::string_view source = "<memory>");

/// Policy, response model and the shape entries needed to rebuild them.
std::string format_train_state(const TrainState& state);
TrainState parse_train_state(std::string_view text, std::string_view source = "<memory>");
void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

void save_irt(const IrtParams& params, const std::filesystem::path& path);
IrtParams load_irt(const std::filesystem::path& path);

using ConfigTable = std::map<std::string, std::string>;

/// `key = value` lines; `#` starts a comment.
ConfigTable parse_config(std::string_view text, std::string_view source = "<memory>");
ConfigTable load_config(const std::filesystem::path& path);

/// Applies the recognized TrainConfig keys and removes them from `table`.
void apply_config(ConfigTable& table, TrainConfig& cfg);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace cbobcat
