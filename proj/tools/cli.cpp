#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "heteroqa/checkpoint.hpp"
#include "heteroqa/config.hpp"
#include "heteroqa/dataset.hpp"
#include "heteroqa/error.hpp"
#include "heteroqa/evaluation.hpp"
#include "heteroqa/graph.hpp"
#include "heteroqa/retrieval.hpp"
#include "heteroqa/training.hpp"

namespace heteroqa::cli {
namespace {

struct Command {
  const char* name;
  const char* help;
};

constexpr Command kCommands[] = {
    {"build-index", "build BM25 indexes over article and QA corpora"},
    {"build-dataset", "attach retrieved MIS bundles to questions"},
    {"stats", "dataset statistics table"},
    {"train", "train a model and write a checkpoint"},
    {"generate", "answer every question of a dataset"},
    {"evaluate", "score predictions against references"},
    {"gradcheck", "compare analytic and finite-difference gradients"},
    {"make-fixture", "write the synthetic fixture corpora into a directory"},
};

struct Invocation {
  std::string command;
  std::string config_file;
  bool dry_run = false;
  std::vector<std::pair<std::string, std::string>> overrides;
};

const std::string& require(const std::string& value, const char* key) {
  if (value.empty()) throw UsageError(std::string("missing required setting ") + key);
  return value;
}

void apply_layers(RunConfig& config, const Invocation& inv) {
  if (!inv.config_file.empty()) apply_config_file(config, inv.config_file);
  apply_environment(config);
  for (const auto& [key, value] : inv.overrides) set_value(config, key, value);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

int cmd_build_index(const RunConfig& cfg, std::ostream& out) {
  const auto& p = cfg.paths;
  if (p.articles.empty() && p.qa_pairs.empty()) throw UsageError("build-index needs paths.articles or paths.qa_pairs");
  auto report = [&](const char* what, const Bm25Index& idx, const std::string& path) {
    out << what << " index: " << idx.doc_count() << " documents, " << idx.postings().size() << " terms, avgdl "
        << idx.avgdl() << " -> " << path << '\n';
  };
  if (!p.articles.empty()) {
    const auto& dest = require(p.article_index, "paths.article_index");
    const auto idx = build_article_index(load_articles_jsonl(p.articles), cfg.model.token_mode, cfg.bm25);
    idx.save(dest);
    report("article", idx, dest);
  }
  if (!p.qa_pairs.empty()) {
    const auto& dest = require(p.qa_index, "paths.qa_index");
    const auto idx = build_qa_index(load_qa_jsonl(p.qa_pairs), cfg.model.token_mode, cfg.bm25);
    idx.save(dest);
    report("qa", idx, dest);
  }
  return kOk;
}

int cmd_build_dataset(const RunConfig& cfg, std::ostream& out) {
  const auto& p = cfg.paths;
  auto samples = load_jsonl(require(p.questions, "paths.questions"), false);
  const auto& dest = require(p.dataset, "paths.dataset");
  if (cfg.dataset_format == "msmplus") {
    for (auto& s : samples) s.mis = apply_caps(std::move(s.mis), cfg.caps);
    if (!p.qa_index.empty()) {
      samples = build_msmplus(std::move(samples), Bm25Index::load(p.qa_index), cfg.caps.related_qa);
    } else {
      samples = build_msmplus(std::move(samples), cfg.caps.related_qa, cfg.model.token_mode, cfg.bm25);
    }
  } else {
    if (p.article_index.empty() && p.qa_index.empty()) {
      throw UsageError("build-dataset needs paths.article_index or paths.qa_index");
    }
    const auto articles = p.article_index.empty() ? Bm25Index{} : Bm25Index::load(p.article_index);
    const auto qa = p.qa_index.empty() ? Bm25Index{} : Bm25Index::load(p.qa_index);
    for (auto& s : samples) s.mis = assemble_mis(s.question, articles, qa, cfg.caps, s.id);
  }
  save_jsonl(dest, samples);
  std::size_t empty = 0;
  for (const auto& s : samples) empty += s.mis.empty() ? 1 : 0;
  out << "wrote " << samples.size() << " samples (" << empty << " without MIS) -> " << dest << '\n';
  return kOk;
}

int cmd_stats(const RunConfig& cfg, std::ostream& out) {
  const auto& p = cfg.paths;
  std::vector<std::vector<TrainingSample>> storage;
  std::vector<SplitSamples> splits;
  const std::pair<const char*, const std::string*> sources[] = {
      {"train", &p.dataset}, {"validation", &p.validation}, {"test", &p.test}};
  for (const auto& [name, path] : sources) {
    if (path->empty()) continue;
    storage.push_back(load_jsonl(*path, false));
  }
  std::size_t i = 0;
  for (const auto& [name, path] : sources) {
    if (path->empty()) continue;
    splits.push_back(SplitSamples{name, storage[i++]});
  }
  if (splits.empty()) throw UsageError("stats needs paths.dataset, paths.validation or paths.test");
  const auto table = format_stats_table(compute_stats(splits, cfg.model.token_mode));
  out << table;
  if (!p.output.empty()) write_text(p.output, table);
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto& p = cfg.paths;
  const auto samples = load_jsonl(require(p.dataset, "paths.dataset"), true);
  const auto& dest = require(p.checkpoint, "paths.checkpoint");
  if (!cfg.model.truncate_texts) {
    validate_lengths(samples, cfg.model.token_mode, static_cast<std::size_t>(cfg.model.encoder_max_positions));
  }
  HeteroQaModel model(cfg.model, build_sample_vocab(samples, cfg.model.token_mode, cfg.vocab), cfg.train.seed);
  out << "samples " << samples.size() << ", vocabulary " << model.vocab().size() << ", parameters "
      << model.params().scalar_count() << " in " << model.params().size() << " tensors\n";

  const int every = std::max(1, cfg.train.steps / 10);
  const auto log = train(model, samples, cfg.train, [&](const StepLog& s) {
    if (s.step % every == 0 || s.step == cfg.train.steps) {
      out << "step " << s.step << '/' << cfg.train.steps << std::fixed << std::setprecision(6) << "  L " << s.loss.total
          << "  L_e " << s.loss.ce << "  L_q " << s.loss.graph << std::defaultfloat << '\n';
    }
  });
  save_checkpoint(dest, make_checkpoint(model, cfg));
  out << "checkpoint -> " << dest << '\n';
  if (!p.metrics.empty()) {
    std::ofstream csv(p.metrics, std::ios::binary | std::ios::trunc);
    if (!csv) throw ValidationError("cannot write " + p.metrics);
    write_metrics_csv(csv, log);
  }
  return kOk;
}

int cmd_generate(const RunConfig& cfg, const std::optional<Checkpoint>& checkpoint, std::ostream& out) {
  const auto& p = cfg.paths;
  const auto samples = load_jsonl(require(p.dataset, "paths.dataset"), false);
  const auto& dest = require(p.output, "paths.output");
  std::string lines;
  auto emit = [&](const std::string& id, const std::string& answer) {
    lines += nlohmann::json{{"id", id}, {"answer", answer}}.dump() + "\n";
  };
  if (cfg.generate_method == "retrieved1") {
    for (const auto& s : samples) emit(s.id, retrieved1(s));
  } else {
    const auto model = restore_model(*checkpoint, cfg);
    const auto options = graph_options(cfg);
    for (const auto& s : samples) emit(s.id, model.generate_text(build_graph(s, options), cfg.generate));
  }
  write_text(dest, lines);
  out << "wrote " << samples.size() << " answers -> " << dest << '\n';
  return kOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  const auto& p = cfg.paths;
  const auto report = evaluate_run(std::filesystem::path(require(p.predictions, "paths.predictions")),
                                   std::filesystem::path(require(p.references, "paths.references")),
                                   cfg.model.token_mode);
  out << report.to_table();
  if (!p.output.empty()) write_text(p.output, report.to_json().dump(2) + "\n");
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  TrainingSample sample;
  if (!cfg.paths.dataset.empty()) {
    const auto samples = load_jsonl(cfg.paths.dataset, true);
    if (cfg.gradcheck_sample >= samples.size()) {
      throw ValidationError("gradcheck.sample " + std::to_string(cfg.gradcheck_sample) + " out of range (" +
                            std::to_string(samples.size()) + " samples)");
    }
    sample = samples[cfg.gradcheck_sample];
  } else {
    sample = make_fixture(FixtureOptions{}).samples.at(cfg.gradcheck_sample);
  }
  const auto options = graph_options(cfg);
  const auto graph = build_graph(sample, options);
  HeteroQaModel model(cfg.model, build_sample_vocab(std::span(&sample, 1), cfg.model.token_mode, cfg.vocab),
                      cfg.train.seed);
  out << "sample " << sample.id << ": " << graph.node_count() << " nodes, " << graph.edge_count() << " edges, "
      << model.params().scalar_count() << " parameters\n";
  const auto report = gradcheck(model, sample, options, cfg.train.psi, cfg.gradcheck_eps, cfg.gradcheck_tol);
  out << format_gradcheck_report(report);
  return report.passed() ? kOk : kNumerical;
}

int cmd_make_fixture(const RunConfig& cfg, std::ostream& out) {
  const std::filesystem::path dir = require(cfg.paths.output, "paths.output");
  std::filesystem::create_directories(dir);
  const auto fixture = make_fixture(FixtureOptions{});
  save_articles_jsonl(dir / "articles.jsonl", fixture.articles);
  save_qa_jsonl(dir / "qa.jsonl", fixture.qa_pairs);
  std::vector<TrainingSample> questions = fixture.samples;
  for (auto& s : questions) s.mis = {};
  save_jsonl(dir / "questions.jsonl", questions);
  out << "wrote " << fixture.articles.size() << " articles, " << fixture.qa_pairs.size() << " QA pairs, "
      << questions.size() << " questions -> " << dir.string() << '\n';
  return kOk;
}

int dispatch(const Invocation& inv, std::ostream& out) {
  RunConfig cfg;
  apply_layers(cfg, inv);

  // A trained model brings its own configuration; the command line may only
  // change settings that leave the architecture intact.
  std::optional<Checkpoint> checkpoint;
  if (inv.command == "generate" && cfg.generate_method == "model") {
    checkpoint = load_checkpoint(require(cfg.paths.checkpoint, "paths.checkpoint"));
    cfg = checkpoint_config(*checkpoint);
    apply_layers(cfg, inv);
  }
  validate_config(cfg);

  out << "# heteroqa " << inv.command << " resolved config\n" << render_config(cfg) << "#\n";
  if (inv.dry_run) return kOk;

  if (inv.command == "build-index") return cmd_build_index(cfg, out);
  if (inv.command == "build-dataset") return cmd_build_dataset(cfg, out);
  if (inv.command == "stats") return cmd_stats(cfg, out);
  if (inv.command == "train") return cmd_train(cfg, out);
  if (inv.command == "generate") return cmd_generate(cfg, checkpoint, out);
  if (inv.command == "evaluate") return cmd_evaluate(cfg, out);
  if (inv.command == "gradcheck") return cmd_gradcheck(cfg, out);
  if (inv.command == "make-fixture") return cmd_make_fixture(cfg, out);
  throw UsageError("unknown command " + inv.command);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HeteroQA: answer generation over heterogeneous retrieved evidence"};
  app.name("heteroqa");
  app.require_subcommand(1);

  Invocation inv;
  std::map<std::string, std::vector<std::pair<std::string, CLI::Option*>>> key_options;
  std::map<std::string, std::string> values;
  for (const auto& [name, help] : kCommands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_file, "config file of key = value lines");
    sub->add_flag("--dry-run", inv.dry_run, "print the resolved config and exit");
    for (const auto& key : config_keys()) {
      auto* opt = sub->add_option("--" + key.name, values[key.name], key.help);
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      key_options[name].emplace_back(key.name, opt);
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  for (const auto* sub : app.get_subcommands()) {
    inv.command = sub->get_name();
    for (const auto& [key, opt] : key_options[inv.command]) {
      if (opt->count() > 0) inv.overrides.emplace_back(key, values[key]);
    }
  }

  try {
    return dispatch(inv, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  }
}

}  // namespace heteroqa::cli
