#include "heteroqa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "heteroqa/error.hpp"

namespace heteroqa {
namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw ValidationError("candidate/reference count mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

std::map<Tokens, std::size_t> ngram_counts(const Tokens& toks, int n) {
  std::map<Tokens, std::size_t> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
    ++counts[Tokens(toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

double brevity_penalty(std::size_t c, std::size_t r) {
  if (c == 0) return 0.0;
  if (c >= r) return 1.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

constexpr double kMeteorAlpha = 0.9;
constexpr double kMeteorGamma = 0.5;
constexpr double kMeteorBeta = 3.0;

}  // namespace

NgramMatch ngram_match(const Tokens& candidate, const Tokens& reference, int n) {
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  NgramMatch m;
  for (const auto& [gram, count] : cand) {
    m.total += count;
    auto it = ref.find(gram);
    if (it != ref.end()) m.matched += std::min(count, it->second);
  }
  return m;
}

BleuScores bleu(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  check_lengths(candidates.size(), references.size());
  if (candidates.empty()) throw ValidationError("BLEU needs at least one candidate");

  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};
  std::size_t c_len = 0;
  std::size_t r_len = 0;
  double sentence_sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (int n = 1; n <= 4; ++n) {
      const auto m = ngram_match(candidates[i], references[i], n);
      matched[static_cast<std::size_t>(n - 1)] += m.matched;
      total[static_cast<std::size_t>(n - 1)] += m.total;
    }
    c_len += candidates[i].size();
    r_len += references[i].size();
    sentence_sum += sentence_bleu(candidates[i], references[i]);
  }

  BleuScores out;
  out.bleu = sentence_sum / static_cast<double>(candidates.size());
  const double bp = brevity_penalty(c_len, r_len);
  for (int n = 1; n <= 4; ++n) {
    // Orders the candidates are too short to contain are left out of the mean.
    double log_sum = 0.0;
    int orders = 0;
    bool zero = false;
    for (int k = 0; k < n; ++k) {
      if (total[static_cast<std::size_t>(k)] == 0) continue;
      if (matched[static_cast<std::size_t>(k)] == 0) {
        zero = true;
        break;
      }
      log_sum += std::log(static_cast<double>(matched[static_cast<std::size_t>(k)]) /
                          static_cast<double>(total[static_cast<std::size_t>(k)]));
      ++orders;
    }
    out.bleu_n[static_cast<std::size_t>(n - 1)] = (zero || orders == 0) ? 0.0 : bp * std::exp(log_sum / orders);
  }
  return out;
}

double sentence_bleu(const Tokens& candidate, const Tokens& reference, double smoothing) {
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= 4; ++n) {
    const auto m = ngram_match(candidate, reference, n);
    if (m.total == 0) continue;
    const double num = m.matched == 0 ? smoothing : static_cast<double>(m.matched);
    log_sum += std::log(num / static_cast<double>(m.total));
    ++orders;
  }
  return brevity_penalty(candidate.size(), reference.size()) * std::exp(log_sum / orders);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  check_lengths(candidates.size(), references.size());
  if (candidates.empty()) throw ValidationError("ROUGE-L needs at least one candidate");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    if (c.empty() || r.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(c, r));
    const double p = lcs / static_cast<double>(c.size());
    const double rec = lcs / static_cast<double>(r.size());
    if (p + rec > 0.0) sum += 2.0 * p * rec / (p + rec);
  }
  return sum / static_cast<double>(candidates.size());
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  std::unordered_map<std::string, std::vector<std::size_t>> ref_positions;
  for (std::size_t j = 0; j < reference.size(); ++j) ref_positions[reference[j]].push_back(j);
  std::unordered_map<std::string, std::size_t> cand_count;
  for (const auto& w : candidate) ++cand_count[w];

  // Every word type contributes min(count in candidate, count in reference).
  std::unordered_map<std::string, std::size_t> skips_left;
  std::size_t target_matches = 0;
  for (const auto& [w, n] : cand_count) {
    auto it = ref_positions.find(w);
    const std::size_t avail = it == ref_positions.end() ? 0 : it->second.size();
    target_matches += std::min(n, avail);
    skips_left[w] = n - std::min(n, avail);
  }
  if (target_matches == 0) return {};

  constexpr std::size_t kNoMatch = std::numeric_limits<std::size_t>::max();
  std::vector<bool> used(reference.size(), false);
  std::size_t best = std::numeric_limits<std::size_t>::max();
  std::size_t budget = 2'000'000;

  // Depth-first branch and bound over candidate positions; prefers continuing the current chunk.
  auto search = [&](auto&& self, std::size_t i, std::size_t prev_j, std::size_t chunks) -> void {
    if (chunks >= best || budget == 0) return;
    --budget;
    if (i == candidate.size()) {
      best = chunks;
      return;
    }
    const auto& w = candidate[i];
    auto it = ref_positions.find(w);
    if (it != ref_positions.end()) {
      std::vector<std::size_t> options;
      if (prev_j != kNoMatch && prev_j + 1 < reference.size() && reference[prev_j + 1] == w && !used[prev_j + 1]) {
        options.push_back(prev_j + 1);
      }
      for (auto j : it->second)
        if (!used[j] && (options.empty() || j != options.front())) options.push_back(j);
      for (auto j : options) {
        const bool continues = prev_j != kNoMatch && j == prev_j + 1;
        used[j] = true;
        self(self, i + 1, j, continues ? chunks : chunks + 1);
        used[j] = false;
      }
    }
    auto& skips = skips_left[w];
    if (skips > 0) {
      --skips;
      self(self, i + 1, kNoMatch, chunks);
      ++skips;
    }
  };
  search(search, 0, kNoMatch, 0);
  return {target_matches, best};
}

double meteor_sentence(const Tokens& candidate, const Tokens& reference) {
  const auto al = meteor_align(candidate, reference);
  if (al.matches == 0) return 0.0;
  const double m = static_cast<double>(al.matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f_mean = p * r / (kMeteorAlpha * p + (1.0 - kMeteorAlpha) * r);
  const double penalty = kMeteorGamma * std::pow(static_cast<double>(al.chunks) / m, kMeteorBeta);
  return f_mean * (1.0 - penalty);
}

double meteor_lite(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  check_lengths(candidates.size(), references.size());
  if (candidates.empty()) throw ValidationError("METEOR needs at least one candidate");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += meteor_sentence(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

std::string retrieved1(const TrainingSample& sample) {
  struct Choice {
    double score;
    int kind;  // 0 article, 1 related QA
    const std::string* id;
    const std::string* text;
  };
  std::optional<Choice> best;
  auto consider = [&](Choice c) {
    if (!best || c.score > best->score ||
        (c.score == best->score && (c.kind < best->kind || (c.kind == best->kind && *c.id < *best->id)))) {
      best = c;
    }
  };
  for (const auto& a : sample.mis.articles) consider({a.score, 0, &a.id, &a.text});
  for (const auto& qa : sample.mis.related_qa) consider({qa.score, 1, &qa.id, &qa.answer});
  return best ? *best->text : std::string{};
}

nlohmann::json MetricReport::to_json() const {
  return {{"BLEU", bleu},           {"BLEU1", bleu_n[0]},  {"BLEU2", bleu_n[1]}, {"BLEU3", bleu_n[2]},
          {"BLEU4", bleu_n[3]},     {"ROUGE-L", rouge_l}, {"METEOR", meteor},   {"n_samples", n_samples}};
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << "# BLEU = mean sentence-level smoothed BLEU-4; BLEU1-4 = corpus cumulative; METEOR = METEOR-lite (exact "
        "match)\n";
  os << std::fixed;
  auto row = [&](const char* name, double v, int precision) {
    os << std::left << std::setw(10) << name << std::right << std::setw(10) << std::setprecision(precision) << v
       << '\n';
  };
  row("BLEU", 100.0 * bleu, 2);
  row("BLEU1", 100.0 * bleu_n[0], 2);
  row("BLEU2", 100.0 * bleu_n[1], 2);
  row("BLEU3", 100.0 * bleu_n[2], 2);
  row("BLEU4", 100.0 * bleu_n[3], 2);
  row("ROUGE-L", 100.0 * rouge_l, 2);
  row("METEOR", meteor, 4);
  os << std::left << std::setw(10) << "samples" << std::right << std::setw(10) << n_samples << '\n';
  return os.str();
}

MetricReport compute_metrics(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  MetricReport r;
  const auto b = bleu(candidates, references);
  r.bleu = b.bleu;
  r.bleu_n = b.bleu_n;
  r.rouge_l = rouge_l(candidates, references);
  r.meteor = meteor_lite(candidates, references);
  r.n_samples = candidates.size();
  return r;
}

std::map<std::string, std::string> load_answers_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    const auto where = path.string() + " line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("answer") || !obj["answer"].is_string()) {
      throw ValidationError(where + ": expected {\"id\", \"answer\"}");
    }
    const auto& idv = obj["id"];
    std::string id = idv.is_string() ? idv.get<std::string>() : idv.dump();
    if (!out.emplace(id, obj["answer"].get<std::string>()).second) {
      throw ValidationError(where + ": duplicate id " + id);
    }
  }
  return out;
}

MetricReport evaluate_run(const std::map<std::string, std::string>& predictions,
                          const std::map<std::string, std::string>& references, TokenMode mode) {
  std::vector<std::string> missing;
  for (const auto& [id, text] : references)
    if (!predictions.contains(id)) missing.push_back("prediction for " + id);
  for (const auto& [id, text] : predictions)
    if (!references.contains(id)) missing.push_back("reference for " + id);
  if (!missing.empty() || references.empty()) {
    std::string msg = references.empty() || predictions.empty() ? "no samples to evaluate" : "id sets differ:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " [missing " + missing[i] + "]";
    if (missing.size() > 20) msg += " ...";
    throw ValidationError(msg);
  }
  std::vector<Tokens> cands;
  std::vector<Tokens> refs;
  for (const auto& [id, ref] : references) {
    cands.push_back(tokenize(predictions.at(id), mode).tokens);
    refs.push_back(tokenize(ref, mode).tokens);
  }
  return compute_metrics(cands, refs);
}

MetricReport evaluate_run(const std::filesystem::path& predictions, const std::filesystem::path& references,
                          TokenMode mode) {
  return evaluate_run(load_answers_jsonl(predictions), load_answers_jsonl(references), mode);
}

}  // namespace heteroqa
