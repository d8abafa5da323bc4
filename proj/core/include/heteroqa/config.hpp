#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "heteroqa/decoder.hpp"
#include "heteroqa/model.hpp"
#include "heteroqa/retrieval.hpp"
#include "heteroqa/sample.hpp"
#include "heteroqa/textprep.hpp"
#include "heteroqa/training.hpp"

namespace heteroqa {

struct RunPaths {
  std::string articles;
  std::string qa_pairs;
  std::string questions;
  std::string article_index;
  std::string qa_index;
  std::string dataset;
  std::string validation;
  std::string test;
  std::string checkpoint;
  std::string output;
  std::string metrics;
  std::string references;
  std::string predictions;
};

/// Everything a command needs, addressable by flat dotted keys.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  GenerationConfig generate;
  VocabOptions vocab;
  Bm25Params bm25;
  MisCaps caps;
  /// "heteroqa" assembles articles + related QA; "msmplus" keeps each
  /// sample's articles and adds related QA retrieved from the dataset itself.
  std::string dataset_format = "heteroqa";
  /// "model" decodes with the trained model; "retrieved1" copies the top MIS document.
  std::string generate_method = "model";
  double gradcheck_eps = 1e-5;
  double gradcheck_tol = 1e-4;
  std::size_t gradcheck_sample = 0;
  RunPaths paths;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// All keys in render order.
const std::vector<ConfigKey>& config_keys();
bool is_config_key(std::string_view key);

/// Throws UsageError for unknown keys or unparsable values.
void set_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_value(const RunConfig& config, std::string_view key);

/// "key = value" lines; '#' starts a comment. Later assignments win.
void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin = "config");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// HETEROQA_SEED, when set, replaces train.seed.
void apply_environment(RunConfig& config);

/// Every key with its resolved value, one "key = value" per line.
std::string render_config(const RunConfig& config);

/// Keys that determine parameter names and shapes.
bool is_architecture_key(std::string_view key);
/// FNV-1a over the rendered architecture keys.
std::uint64_t config_hash(const RunConfig& config);

/// Cross-field checks (divisibility of heads, positive sizes, ...).
void validate_config(const RunConfig& config);

/// Graph options used for training and generation.
GraphOptions graph_options(const RunConfig& config);

}  // namespace heteroqa
