#include "heteroqa/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "heteroqa/error.hpp"

namespace heteroqa {
namespace {

constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw UsageError("invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                   std::string(expected) + ")");
}

template <typename T>
T parse_integer(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  return out;
}

double parse_double(std::string_view key, std::string_view value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true|false");
}

// 0 in a file means "no limit".
std::size_t parse_cap(std::string_view key, std::string_view value) {
  const auto n = parse_integer<std::size_t>(key, value);
  return n == 0 ? kUnlimited : n;
}
std::string format_cap(std::size_t n) { return n == kUnlimited ? "0" : std::to_string(n); }

struct Entry {
  ConfigKey key;
  bool architecture = false;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename T, typename Access>
Entry integer(std::string name, std::string help, Access access, bool arch = false) {
  auto key = name;
  return {{std::move(name), std::move(help)},
          arch,
          [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_integer<T>(key, v); }};
}

template <typename Access>
Entry real(std::string name, std::string help, Access access, bool arch = false) {
  auto key = name;
  return {{std::move(name), std::move(help)},
          arch,
          [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_double(key, v); }};
}

template <typename Access>
Entry boolean(std::string name, std::string help, Access access, bool arch = false) {
  auto key = name;
  return {{std::move(name), std::move(help)},
          arch,
          [access](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_bool(key, v); }};
}

template <typename Access, typename Parse>
Entry choice(std::string name, std::string help, Access access, Parse parse, bool arch = false) {
  return {{std::move(name), std::move(help)},
          arch,
          [access](const RunConfig& c) { return std::string(to_string(access(const_cast<RunConfig&>(c)))); },
          [access, parse](RunConfig& c, std::string_view v) { access(c) = parse(v); }};
}

template <typename Access>
Entry text(std::string name, std::string help, Access access) {
  return {{std::move(name), std::move(help)},
          false,
          [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
          [access](RunConfig& c, std::string_view v) { access(c) = std::string(v); }};
}

Entry cap(std::string name, std::string help, std::size_t& (*access)(RunConfig&)) {
  auto key = name;
  return {{std::move(name), std::move(help)},
          false,
          [access](const RunConfig& c) { return format_cap(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_cap(key, v); }};
}

// Graph-level caps live in an optional; a zero cap everywhere clears it.
Entry graph_cap(std::string name, std::string help, std::size_t MisCaps::*field) {
  auto key = name;
  return {{std::move(name), std::move(help)},
          false,
          [field](const RunConfig& c) {
            const auto& caps = c.train.graph.caps;
            return format_cap(caps ? (*caps).*field : kUnlimited);
          },
          [field, key](RunConfig& c, std::string_view v) {
            auto& caps = c.train.graph.caps;
            if (!caps) caps = MisCaps{kUnlimited, kUnlimited, kUnlimited};
            (*caps).*field = parse_cap(key, v);
            if (caps->articles == kUnlimited && caps->related_qa == kUnlimited &&
                caps->comments_per_article == kUnlimited) {
              caps.reset();
            }
          }};
}

std::string parse_dataset_format(std::string_view v) {
  if (v == "heteroqa" || v == "msmplus") return std::string(v);
  throw UsageError("unknown dataset.format '" + std::string(v) + "' (expected heteroqa|msmplus)");
}

std::vector<Entry> make_entries() {
  std::vector<Entry> e;
  e.push_back(choice("tokenizer.mode", "word or char tokenization", [](RunConfig& c) -> TokenMode& {
    return c.model.token_mode;
  }, parse_token_mode, true));
  e.push_back(integer<std::size_t>("vocab.min_freq", "minimum token count kept in the vocabulary",
                                   [](RunConfig& c) -> std::size_t& { return c.vocab.min_freq; }));
  e.push_back(integer<std::size_t>("vocab.max_size", "maximum regular tokens in the vocabulary",
                                   [](RunConfig& c) -> std::size_t& { return c.vocab.max_size; }));
  e.push_back(real("retrieval.k1", "BM25 term saturation", [](RunConfig& c) -> double& { return c.bm25.k1; }));
  e.push_back(real("retrieval.b", "BM25 length normalization", [](RunConfig& c) -> double& { return c.bm25.b; }));
  e.push_back(text("dataset.format", "heteroqa or msmplus", [](RunConfig& c) -> std::string& {
    return c.dataset_format;
  }));
  e.back().set = [](RunConfig& c, std::string_view v) { c.dataset_format = parse_dataset_format(v); };
  e.push_back(cap("mis.articles", "articles retrieved per question (0 = no limit)",
                  [](RunConfig& c) -> std::size_t& { return c.caps.articles; }));
  e.push_back(cap("mis.related_qa", "related QA pairs retrieved per question (0 = no limit)",
                  [](RunConfig& c) -> std::size_t& { return c.caps.related_qa; }));
  e.push_back(cap("mis.comments_per_article", "comments kept per article (0 = no limit)",
                  [](RunConfig& c) -> std::size_t& { return c.caps.comments_per_article; }));
  e.push_back(boolean("graph.reverse_edges", "add a reverse edge for every forward edge",
                      [](RunConfig& c) -> bool& { return c.train.graph.reverse_edges; }));
  e.push_back(choice("graph.mis_ablation", "none, no_related_qa, no_comments or no_articles",
                     [](RunConfig& c) -> MisAblation& { return c.train.graph.ablation; }, parse_mis_ablation));
  e.push_back(graph_cap("graph.max_articles", "articles kept per graph (0 = all)", &MisCaps::articles));
  e.push_back(graph_cap("graph.max_related_qa", "related QA pairs kept per graph (0 = all)", &MisCaps::related_qa));
  e.push_back(graph_cap("graph.max_comments", "comments kept per article in a graph (0 = all)",
                        &MisCaps::comments_per_article));
  e.push_back(integer<int>("model.d_model", "hidden size shared by all modules",
                           [](RunConfig& c) -> int& { return c.model.d_model; }, true));
  e.push_back(real("model.init_std", "standard deviation of normal initialization",
                   [](RunConfig& c) -> double& { return c.model.init_std; }, true));
  e.push_back(integer<int>("encoder.layers", "encoder layers", [](RunConfig& c) -> int& {
    return c.model.encoder_layers;
  }, true));
  e.push_back(integer<int>("encoder.heads", "encoder attention heads", [](RunConfig& c) -> int& {
    return c.model.encoder_heads;
  }, true));
  e.push_back(integer<int>("encoder.ffn_dim", "encoder feed-forward width", [](RunConfig& c) -> int& {
    return c.model.encoder_ffn;
  }, true));
  e.push_back(integer<int>("encoder.max_positions", "longest encodable text in tokens", [](RunConfig& c) -> int& {
    return c.model.encoder_max_positions;
  }, true));
  e.push_back(boolean("encoder.truncate", "head-truncate over-long texts instead of rejecting them",
                      [](RunConfig& c) -> bool& { return c.model.truncate_texts; }));
  e.push_back(integer<int>("qgt.layers", "graph layers", [](RunConfig& c) -> int& { return c.model.qgt_layers; },
                           true));
  e.push_back(integer<int>("qgt.heads", "graph attention heads", [](RunConfig& c) -> int& {
    return c.model.qgt_heads;
  }, true));
  e.push_back(choice("qgt.beta", "raw or sigmoid question relevance", [](RunConfig& c) -> BetaMode& {
    return c.model.beta_mode;
  }, parse_beta_mode, true));
  e.push_back(boolean("qgt.zero_init_output", "start every graph layer as the identity",
                      [](RunConfig& c) -> bool& { return c.model.qgt_zero_init_output; }, true));
  e.push_back(integer<int>("decoder.layers", "decoder layers", [](RunConfig& c) -> int& {
    return c.model.decoder_layers;
  }, true));
  e.push_back(integer<int>("decoder.heads", "decoder attention heads", [](RunConfig& c) -> int& {
    return c.model.decoder_heads;
  }, true));
  e.push_back(integer<int>("decoder.ffn_dim", "decoder feed-forward width", [](RunConfig& c) -> int& {
    return c.model.decoder_ffn;
  }, true));
  e.push_back(integer<int>("decoder.max_positions", "longest framed answer in tokens", [](RunConfig& c) -> int& {
    return c.model.decoder_max_positions;
  }, true));
  e.push_back(choice("decoder.graph_attn_layers", "all or last: decoder layers that attend over the graph",
                     [](RunConfig& c) -> GraphAttnLayers& { return c.model.graph_attn_layers; },
                     parse_graph_attn_layers, true));
  e.push_back(choice("train.ablation", "full, hgt, no_graph_loss or gat", [](RunConfig& c) -> Ablation& {
    return c.model.ablation;
  }, parse_ablation, true));
  e.push_back(real("train.psi", "weight of the retrieval-score loss", [](RunConfig& c) -> double& {
    return c.train.psi;
  }));
  e.push_back(real("train.lr", "Adam learning rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }));
  e.push_back(integer<int>("train.steps", "optimizer steps", [](RunConfig& c) -> int& { return c.train.steps; }));
  e.push_back(integer<int>("train.batch_size", "samples per step", [](RunConfig& c) -> int& {
    return c.train.batch_size;
  }));
  e.push_back(integer<std::uint64_t>("train.seed", "seed for initialization and shuffling",
                                     [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
  e.push_back(real("train.clip_norm", "global gradient norm limit (0 disables)", [](RunConfig& c) -> double& {
    return c.train.clip_norm;
  }));
  e.push_back(boolean("train.normalize_scores", "divide retrieval targets by their per-sample maximum",
                      [](RunConfig& c) -> bool& { return c.train.normalize_scores; }));
  e.push_back(integer<int>("train.warmup_steps", "linear learning-rate warmup", [](RunConfig& c) -> int& {
    return c.train.warmup_steps;
  }));
  e.push_back(choice("generate.mode", "greedy or beam", [](RunConfig& c) -> DecodeMode& { return c.generate.mode; },
                     parse_decode_mode));
  e.push_back(integer<int>("generate.beam_width", "beam width", [](RunConfig& c) -> int& {
    return c.generate.beam_width;
  }));
  e.push_back(integer<int>("generate.max_len", "maximum generated tokens", [](RunConfig& c) -> int& {
    return c.generate.max_len;
  }));
  e.push_back(real("generate.length_penalty", "beam score divides by length^penalty", [](RunConfig& c) -> double& {
    return c.generate.length_penalty;
  }));
  e.push_back(text("generate.method", "model or retrieved1", [](RunConfig& c) -> std::string& {
    return c.generate_method;
  }));
  e.back().set = [](RunConfig& c, std::string_view v) {
    if (v != "model" && v != "retrieved1") {
      throw UsageError("unknown generate.method '" + std::string(v) + "' (expected model|retrieved1)");
    }
    c.generate_method = std::string(v);
  };
  e.push_back(real("gradcheck.eps", "finite-difference step", [](RunConfig& c) -> double& {
    return c.gradcheck_eps;
  }));
  e.push_back(real("gradcheck.tol", "maximum relative error", [](RunConfig& c) -> double& {
    return c.gradcheck_tol;
  }));
  e.push_back(integer<std::size_t>("gradcheck.sample", "index of the dataset sample to check",
                                   [](RunConfig& c) -> std::size_t& { return c.gradcheck_sample; }));
  e.push_back(text("paths.articles", "article corpus JSONL", [](RunConfig& c) -> std::string& {
    return c.paths.articles;
  }));
  e.push_back(text("paths.qa_pairs", "QA corpus JSONL", [](RunConfig& c) -> std::string& {
    return c.paths.qa_pairs;
  }));
  e.push_back(text("paths.questions", "questions to assemble into a dataset", [](RunConfig& c) -> std::string& {
    return c.paths.questions;
  }));
  e.push_back(text("paths.article_index", "article BM25 index file", [](RunConfig& c) -> std::string& {
    return c.paths.article_index;
  }));
  e.push_back(text("paths.qa_index", "QA BM25 index file", [](RunConfig& c) -> std::string& {
    return c.paths.qa_index;
  }));
  e.push_back(text("paths.dataset", "dataset JSONL (training split)", [](RunConfig& c) -> std::string& {
    return c.paths.dataset;
  }));
  e.push_back(text("paths.validation", "validation split JSONL", [](RunConfig& c) -> std::string& {
    return c.paths.validation;
  }));
  e.push_back(text("paths.test", "test split JSONL", [](RunConfig& c) -> std::string& { return c.paths.test; }));
  e.push_back(text("paths.checkpoint", "model checkpoint file", [](RunConfig& c) -> std::string& {
    return c.paths.checkpoint;
  }));
  e.push_back(text("paths.output", "command output file", [](RunConfig& c) -> std::string& {
    return c.paths.output;
  }));
  e.push_back(text("paths.metrics", "training metrics CSV", [](RunConfig& c) -> std::string& {
    return c.paths.metrics;
  }));
  e.push_back(text("paths.references", "reference answers JSONL for evaluation", [](RunConfig& c) -> std::string& {
    return c.paths.references;
  }));
  e.push_back(text("paths.predictions", "predicted answers JSONL for evaluation", [](RunConfig& c) -> std::string& {
    return c.paths.predictions;
  }));
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = make_entries();
  return table;
}

const Entry& entry(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e;
  }
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& e : entries()) out.push_back(e.key);
    return out;
  }();
  return keys;
}

bool is_config_key(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return true;
  }
  return false;
}

void set_value(RunConfig& config, std::string_view key, std::string_view value) {
  entry(key).set(config, trim(value));
}

std::string get_value(const RunConfig& config, std::string_view key) { return entry(key).get(config); }

void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = std::string(origin) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw UsageError(where + ": expected key = value");
    try {
      set_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(where + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str(), path.string());
}

void apply_environment(RunConfig& config) {
  if (const char* seed = std::getenv("HETEROQA_SEED"); seed != nullptr && *seed != '\0') {
    try {
      set_value(config, "train.seed", seed);
    } catch (const UsageError& e) {
      throw UsageError(std::string("HETEROQA_SEED: ") + e.what());
    }
  }
}

std::string render_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += e.key.name + " = " + e.get(config) + "\n";
  return out;
}

bool is_architecture_key(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.key.name == key) return e.architecture;
  }
  return false;
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& e : entries()) {
    if (!e.architecture) continue;
    for (unsigned char ch : e.key.name + "=" + e.get(config) + "\n") {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void validate_config(const RunConfig& config) {
  const auto& m = config.model;
  auto positive = [](int v, const char* key) {
    if (v < 1) throw UsageError(std::string(key) + " must be at least 1");
  };
  positive(m.d_model, "model.d_model");
  positive(m.encoder_layers, "encoder.layers");
  positive(m.encoder_heads, "encoder.heads");
  positive(m.encoder_ffn, "encoder.ffn_dim");
  positive(m.encoder_max_positions, "encoder.max_positions");
  positive(m.qgt_heads, "qgt.heads");
  positive(m.decoder_layers, "decoder.layers");
  positive(m.decoder_heads, "decoder.heads");
  positive(m.decoder_ffn, "decoder.ffn_dim");
  positive(m.decoder_max_positions, "decoder.max_positions");
  positive(m.qgt_layers, "qgt.layers");
  if (m.d_model % m.encoder_heads != 0) throw UsageError("model.d_model must be divisible by encoder.heads");
  if (m.d_model % m.qgt_heads != 0) throw UsageError("model.d_model must be divisible by qgt.heads");
  if (m.d_model % m.decoder_heads != 0) throw UsageError("model.d_model must be divisible by decoder.heads");
  if (!(m.init_std > 0.0)) throw UsageError("model.init_std must be positive");
  const auto& t = config.train;
  if (t.steps < 0) throw UsageError("train.steps must be >= 0");
  positive(t.batch_size, "train.batch_size");
  if (!(t.learning_rate > 0.0)) throw UsageError("train.lr must be positive");
  if (!(t.psi >= 0.0)) throw UsageError("train.psi must be >= 0");
  if (!(t.clip_norm >= 0.0)) throw UsageError("train.clip_norm must be >= 0");
  if (t.warmup_steps < 0) throw UsageError("train.warmup_steps must be >= 0");
  positive(config.generate.beam_width, "generate.beam_width");
  positive(config.generate.max_len, "generate.max_len");
  if (!(config.bm25.k1 >= 0.0)) throw UsageError("retrieval.k1 must be >= 0");
  if (!(config.bm25.b >= 0.0 && config.bm25.b <= 1.0)) throw UsageError("retrieval.b must lie in [0, 1]");
  if (!(config.gradcheck_eps > 0.0)) throw UsageError("gradcheck.eps must be positive");
  if (config.vocab.max_size < 1) throw UsageError("vocab.max_size must be at least 1");
}

GraphOptions graph_options(const RunConfig& config) { return config.train.graph; }

}  // namespace heteroqa
