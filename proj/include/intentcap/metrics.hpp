#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "intentcap/error.hpp"
#include "intentcap/stemmer.hpp"
#include "intentcap/text.hpp"

namespace intentcap {

using CandidateMap = std::map<std::string, std::string>;               // video_id -> caption
using ReferenceMap = std::map<std::string, std::vector<std::string>>;  // video_id -> refs

struct MetricConfig {
  int bleu_max_n = 4;
  double rouge_beta = 1.2;
  int cider_max_n = 4;
  double meteor_alpha = 0.9;
  double meteor_beta = 3.0;
  double meteor_gamma = 0.5;
};

namespace detail {

// n-grams as joined string keys; '\x1f' cannot appear in tokens.
inline std::unordered_map<std::string, int> ngram_counts(const std::vector<std::string>& tokens,
                                                         std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      key.push_back('\x1f');
      key.append(tokens[i + j]);
    }
    ++counts[key];
  }
  return counts;
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[n];
}

}  // namespace detail

// Corpus-level BLEU@4: clipped n-gram precisions summed over the corpus,
// geometric mean over n = 1..4, brevity penalty min(1, e^{1-r/c}) with r the
// closest reference length per candidate. No smoothing: a zero precision at
// any order zeroes the score.
inline double bleu4(const CandidateMap& candidates, const ReferenceMap& references,
                    int max_n = 4) {
  if (candidates.empty()) throw InputError("bleu4: empty candidate corpus");
  const auto n_orders = static_cast<std::size_t>(max_n);
  std::vector<double> numer(n_orders, 0.0), denom(n_orders, 0.0);
  double cand_len_total = 0.0, ref_len_total = 0.0;
  for (const auto& [video_id, caption] : candidates) {
    auto it = references.find(video_id);
    if (it == references.end() || it->second.empty())
      throw InputError("bleu4: no references for video " + video_id);
    const auto cand = tokenize(caption);
    std::vector<std::vector<std::string>> refs;
    refs.reserve(it->second.size());
    for (const auto& r : it->second) refs.push_back(tokenize(r));

    // closest reference length; ties resolved toward the shorter one
    std::size_t best_ref_len = refs[0].size();
    for (const auto& r : refs) {
      const auto d_new = r.size() > cand.size() ? r.size() - cand.size() : cand.size() - r.size();
      const auto d_old = best_ref_len > cand.size() ? best_ref_len - cand.size()
                                                    : cand.size() - best_ref_len;
      if (d_new < d_old || (d_new == d_old && r.size() < best_ref_len)) best_ref_len = r.size();
    }
    cand_len_total += static_cast<double>(cand.size());
    ref_len_total += static_cast<double>(best_ref_len);

    for (std::size_t n = 1; n <= n_orders; ++n) {
      auto cand_counts = detail::ngram_counts(cand, n);
      std::unordered_map<std::string, int> max_ref;
      for (const auto& r : refs)
        for (const auto& [gram, c] : detail::ngram_counts(r, n))
          max_ref[gram] = std::max(max_ref[gram], c);
      double clipped = 0.0, total = 0.0;
      for (const auto& [gram, c] : cand_counts) {
        total += c;
        auto mit = max_ref.find(gram);
        clipped += std::min(c, mit == max_ref.end() ? 0 : mit->second);
      }
      numer[n - 1] += clipped;
      denom[n - 1] += total;
    }
  }
  if (cand_len_total == 0.0) return 0.0;
  double log_prec = 0.0;
  for (std::size_t n = 0; n < n_orders; ++n) {
    if (numer[n] == 0.0 || denom[n] == 0.0) return 0.0;
    log_prec += std::log(numer[n] / denom[n]);
  }
  const double bp =
      cand_len_total >= ref_len_total ? 1.0 : std::exp(1.0 - ref_len_total / cand_len_total);
  return bp * std::exp(log_prec / static_cast<double>(n_orders));
}

// LCS-based F-score, maximum over references.
inline double rouge_l(const std::string& candidate, const std::vector<std::string>& references,
                      double beta = 1.2) {
  const auto cand = tokenize(candidate);
  double best = 0.0;
  for (const auto& ref_str : references) {
    const auto ref = tokenize(ref_str);
    if (cand.empty() || ref.empty()) continue;
    const auto lcs = static_cast<double>(detail::lcs_length(cand, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(cand.size());
    const double r = lcs / static_cast<double>(ref.size());
    const double b2 = beta * beta;
    best = std::max(best, (1.0 + b2) * p * r / (r + b2 * p));
  }
  return best;
}

namespace detail {

struct CiderIdf {
  std::unordered_map<std::string, int> df;  // videos whose references contain the gram
  std::size_t corpus_size = 0;

  double idf(const std::string& gram) const {
    auto it = df.find(gram);
    const double d = it == df.end() ? 1.0 : std::max(1, it->second);
    return std::log(static_cast<double>(corpus_size) / d);
  }
};

inline CiderIdf build_cider_idf(const ReferenceMap& references, int max_n) {
  CiderIdf table;
  table.corpus_size = references.size();
  for (const auto& [video_id, refs] : references) {
    std::unordered_set<std::string> seen;
    for (const auto& r : refs) {
      const auto tokens = tokenize(r);
      for (int n = 1; n <= max_n; ++n)
        for (const auto& [gram, c] : ngram_counts(tokens, static_cast<std::size_t>(n)))
          seen.insert(gram);
    }
    for (const auto& gram : seen) ++table.df[gram];
  }
  return table;
}

inline double cosine(const std::unordered_map<std::string, double>& a,
                     const std::unordered_map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [gram, v] : a) {
    na += v * v;
    auto it = b.find(gram);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [gram, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::unordered_map<std::string, double> tfidf_vector(const std::vector<std::string>& tokens,
                                                            std::size_t n, const CiderIdf& idf) {
  std::unordered_map<std::string, double> vec;
  for (const auto& [gram, c] : ngram_counts(tokens, n)) vec[gram] = c * idf.idf(gram);
  return vec;
}

}  // namespace detail

// Plain CIDEr: TF-IDF n-gram cosine averaged over n = 1..4 and over the
// references, scaled by 10. IDF is taken over the reference corpus with
// df clipped to >= 1; a single-video corpus has all-zero IDF weights and
// degenerates to 0 (callers receive a warning through score_all).
inline std::map<std::string, double> cider_per_video(const CandidateMap& candidates,
                                                     const ReferenceMap& references,
                                                     int max_n = 4) {
  const auto idf = detail::build_cider_idf(references, max_n);
  std::map<std::string, double> scores;
  for (const auto& [video_id, caption] : candidates) {
    auto it = references.find(video_id);
    if (it == references.end() || it->second.empty())
      throw InputError("cider: no references for video " + video_id);
    const auto cand = tokenize(caption);
    double total = 0.0;
    for (int n = 1; n <= max_n; ++n) {
      const auto cand_vec = detail::tfidf_vector(cand, static_cast<std::size_t>(n), idf);
      double ref_sum = 0.0;
      for (const auto& r : it->second)
        ref_sum += detail::cosine(cand_vec,
                                  detail::tfidf_vector(tokenize(r), static_cast<std::size_t>(n), idf));
      total += ref_sum / static_cast<double>(it->second.size());
    }
    scores[video_id] = 10.0 * total / static_cast<double>(max_n);
  }
  return scores;
}

namespace detail {

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Two-stage unigram alignment ("exact matches first, Porter-stem matches on
// the remainder"), maximizing matches and then minimizing chunks. Matches per
// stage are fixed by multiset counts; the chunk-minimal assignment is found
// by searching the staged assignments, seeded with a contiguity-preferring
// greedy pass and capped by a node budget so adversarial inputs with heavy
// token repetition degrade to the greedy result instead of blowing up.
class MeteorAligner {
 public:
  MeteorAligner(const std::vector<std::string>& cand, const std::vector<std::string>& ref)
      : cand_(cand), ref_(ref), cand_stem_(cand.size()), ref_stem_(ref.size()) {
    for (std::size_t i = 0; i < cand.size(); ++i) cand_stem_[i] = porter_stem(cand[i]);
    for (std::size_t j = 0; j < ref.size(); ++j) ref_stem_[j] = porter_stem(ref[j]);
  }

  MeteorAlignment run() {
    ref_of_.assign(cand_.size(), -1);
    used_.assign(ref_.size(), false);
    greedy_stage(cand_, ref_);
    greedy_stage(cand_stem_, ref_stem_);
    MeteorAlignment best{count_matches(), count_chunks()};
    if (best.matches == 0) return best;

    // exact search over all maximum stagings for fewer chunks
    ref_of_.assign(cand_.size(), -1);
    used_.assign(ref_.size(), false);
    const std::size_t exact_target = stage_capacity(cand_, ref_);
    best_chunks_ = best.chunks;
    budget_ = 100000;
    search_stage(0, 0, exact_target, cand_, ref_, [&] {
      const std::size_t stem_target = stage_capacity(cand_stem_, ref_stem_);
      search_stage(0, 0, stem_target, cand_stem_, ref_stem_,
                   [&] { best_chunks_ = std::min(best_chunks_, count_chunks()); });
    });
    best.chunks = best_chunks_;
    return best;
  }

 private:
  // Remaining matchable pairs under equal keys: classes are induced by the
  // key, so capacity is the per-key min of free candidate and reference slots.
  std::size_t stage_capacity(const std::vector<std::string>& cand_keys,
                             const std::vector<std::string>& ref_keys) const {
    std::unordered_map<std::string, std::pair<int, int>> classes;
    for (std::size_t i = 0; i < cand_keys.size(); ++i)
      if (ref_of_[i] < 0) ++classes[cand_keys[i]].first;
    for (std::size_t j = 0; j < ref_keys.size(); ++j)
      if (!used_[j]) ++classes[ref_keys[j]].second;
    std::size_t total = 0;
    for (const auto& [key, counts] : classes)
      total += static_cast<std::size_t>(std::min(counts.first, counts.second));
    return total;
  }

  void greedy_stage(const std::vector<std::string>& cand_keys,
                    const std::vector<std::string>& ref_keys) {
    for (std::size_t ci = 0; ci < cand_keys.size(); ++ci) {
      if (ref_of_[ci] >= 0) continue;
      int pick = -1;
      if (ci > 0 && ref_of_[ci - 1] >= 0) {
        const auto cont = static_cast<std::size_t>(ref_of_[ci - 1]) + 1;
        if (cont < ref_keys.size() && !used_[cont] && cand_keys[ci] == ref_keys[cont])
          pick = static_cast<int>(cont);
      }
      if (pick < 0) {
        for (std::size_t rj = 0; rj < ref_keys.size(); ++rj)
          if (!used_[rj] && cand_keys[ci] == ref_keys[rj]) {
            pick = static_cast<int>(rj);
            break;
          }
      }
      if (pick >= 0) {
        ref_of_[ci] = pick;
        used_[static_cast<std::size_t>(pick)] = true;
      }
    }
  }

  template <typename Complete>
  void search_stage(std::size_t ci, std::size_t placed, std::size_t target,
                    const std::vector<std::string>& cand_keys,
                    const std::vector<std::string>& ref_keys, const Complete& complete) {
    if (budget_ == 0) return;
    --budget_;
    if (placed == target) {
      complete();
      return;
    }
    if (ci >= cand_keys.size() || placed + (cand_keys.size() - ci) < target) return;
    search_stage(ci + 1, placed, target, cand_keys, ref_keys, complete);
    if (ref_of_[ci] >= 0) return;
    for (std::size_t rj = 0; rj < ref_keys.size(); ++rj) {
      if (used_[rj] || cand_keys[ci] != ref_keys[rj]) continue;
      ref_of_[ci] = static_cast<int>(rj);
      used_[rj] = true;
      search_stage(ci + 1, placed + 1, target, cand_keys, ref_keys, complete);
      ref_of_[ci] = -1;
      used_[rj] = false;
    }
  }

  std::size_t count_matches() const {
    std::size_t m = 0;
    for (int r : ref_of_) m += r >= 0;
    return m;
  }

  std::size_t count_chunks() const {
    std::size_t chunks = 0;
    int prev_ci = -2, prev_rj = -2;
    for (std::size_t ci = 0; ci < ref_of_.size(); ++ci) {
      if (ref_of_[ci] < 0) continue;
      if (!(static_cast<int>(ci) == prev_ci + 1 && ref_of_[ci] == prev_rj + 1)) ++chunks;
      prev_ci = static_cast<int>(ci);
      prev_rj = ref_of_[ci];
    }
    return chunks;
  }

  const std::vector<std::string>& cand_;
  const std::vector<std::string>& ref_;
  std::vector<std::string> cand_stem_, ref_stem_;
  std::vector<int> ref_of_;
  std::vector<bool> used_;
  std::size_t best_chunks_ = 0;
  std::size_t budget_ = 0;
};

inline MeteorAlignment align_meteor(const std::vector<std::string>& cand,
                                    const std::vector<std::string>& ref) {
  return MeteorAligner(cand, ref).run();
}

}  // namespace detail

// METEOR without the WordNet synonym/paraphrase stages: exact + Porter-stem
// alignment, F_mean = PR / (alpha*P + (1-alpha)*R), fragmentation penalty
// gamma * (chunks/matches)^beta. Maximum over references.
inline double meteor_lite(const std::string& candidate, const std::vector<std::string>& references,
                          double alpha = 0.9, double beta = 3.0, double gamma = 0.5) {
  const auto cand = tokenize(candidate);
  double best = 0.0;
  for (const auto& ref_str : references) {
    const auto ref = tokenize(ref_str);
    if (cand.empty() || ref.empty()) continue;
    const auto align = detail::align_meteor(cand, ref);
    if (align.matches == 0) continue;
    const double m = static_cast<double>(align.matches);
    const double p = m / static_cast<double>(cand.size());
    const double r = m / static_cast<double>(ref.size());
    const double f_mean = p * r / (alpha * p + (1.0 - alpha) * r);
    const double penalty =
        gamma * std::pow(static_cast<double>(align.chunks) / m, beta);
    best = std::max(best, f_mean * (1.0 - penalty));
  }
  return best;
}

// Per-metric corpus and per-video scores with the configuration echoed.
struct ScoreReport {
  MetricConfig config;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  double meteor = 0.0;
  std::map<std::string, double> bleu4_per_video;
  std::map<std::string, double> rouge_per_video;
  std::map<std::string, double> cider_per_video;
  std::map<std::string, double> meteor_per_video;
  std::vector<std::string> warnings;
  std::vector<std::string> missing_candidates;  // reference videos with no candidate
};

// Scores every candidate with all four metrics. A candidate without any
// reference is an input error; reference videos with no candidate are listed
// in the report rather than scored as zero. Corpus BLEU is corpus-level, the
// other corpus scores are means of the per-video scores.
inline ScoreReport score_all(const CandidateMap& candidates, const ReferenceMap& references,
                             const MetricConfig& config = {}) {
  if (candidates.empty()) throw InputError("score_all: empty candidate set");
  for (const auto& [video_id, caption] : candidates) {
    auto it = references.find(video_id);
    if (it == references.end() || it->second.empty())
      throw InputError("score_all: candidate video " + video_id + " has no references");
  }
  ScoreReport report;
  report.config = config;
  for (const auto& [video_id, refs] : references)
    if (!candidates.count(video_id)) report.missing_candidates.push_back(video_id);
  if (references.size() < 2)
    report.warnings.push_back(
        "degenerate-idf: single-video reference corpus, CIDEr scores collapse to 0");

  report.bleu4 = bleu4(candidates, references, config.bleu_max_n);
  report.cider_per_video = cider_per_video(candidates, references, config.cider_max_n);

  double rouge_sum = 0.0, meteor_sum = 0.0, cider_sum = 0.0;
  for (const auto& [video_id, caption] : candidates) {
    const auto& refs = references.at(video_id);
    const CandidateMap single{{video_id, caption}};
    const ReferenceMap single_ref{{video_id, refs}};
    report.bleu4_per_video[video_id] = bleu4(single, single_ref, config.bleu_max_n);
    const double r = rouge_l(caption, refs, config.rouge_beta);
    const double m = meteor_lite(caption, refs, config.meteor_alpha, config.meteor_beta,
                                 config.meteor_gamma);
    report.rouge_per_video[video_id] = r;
    report.meteor_per_video[video_id] = m;
    rouge_sum += r;
    meteor_sum += m;
    cider_sum += report.cider_per_video.at(video_id);
  }
  const auto n = static_cast<double>(candidates.size());
  report.rouge_l = rouge_sum / n;
  report.meteor = meteor_sum / n;
  report.cider = cider_sum / n;
  return report;
}

inline nlohmann::json report_to_json(const ScoreReport& r) {
  nlohmann::json per_video = nlohmann::json::object();
  for (const auto& [video_id, b] : r.bleu4_per_video) {
    per_video[video_id] = {{"bleu4", b},
                           {"rouge_l", r.rouge_per_video.at(video_id)},
                           {"cider", r.cider_per_video.at(video_id)},
                           {"meteor_lite", r.meteor_per_video.at(video_id)}};
  }
  return nlohmann::json{
      {"config",
       {{"bleu_max_n", r.config.bleu_max_n},
        {"rouge_beta", r.config.rouge_beta},
        {"cider_max_n", r.config.cider_max_n},
        {"meteor_alpha", r.config.meteor_alpha},
        {"meteor_beta", r.config.meteor_beta},
        {"meteor_gamma", r.config.meteor_gamma}}},
      {"corpus",
       {{"bleu4", r.bleu4}, {"rouge_l", r.rouge_l}, {"cider", r.cider}, {"meteor_lite", r.meteor}}},
      {"per_video", per_video},
      {"warnings", r.warnings},
      {"missing_candidates", r.missing_candidates}};
}

}  // namespace intentcap
