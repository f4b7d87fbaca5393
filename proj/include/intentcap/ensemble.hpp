#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "intentcap/error.hpp"
#include "intentcap/text.hpp"

namespace intentcap {

// Weighted mix of character n-gram cosine and token-level F1. The weights
// must be a convex combination so similarity stays in [0,1].
struct SimilarityConfig {
  std::size_t char_n = 3;
  double w_char = 0.5;
  double w_token = 0.5;

  void validate() const {
    if (char_n < 1) throw ConfigError("similarity: char_n must be >= 1");
    if (w_char < 0.0 || w_token < 0.0 || std::fabs(w_char + w_token - 1.0) > 1e-9)
      throw ConfigError("similarity: weights must be non-negative and sum to 1");
  }
};

namespace detail {

inline std::unordered_map<std::string, int> char_ngrams(const std::string& s, std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (s.empty()) return counts;
  if (s.size() < n) {
    ++counts[s];  // shorter than one gram: the whole string counts once
    return counts;
  }
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[s.substr(i, n)];
  return counts;
}

inline double count_cosine(const std::unordered_map<std::string, int>& a,
                           const std::unordered_map<std::string, int>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [k, v] : a) {
    na += static_cast<double>(v) * v;
    auto it = b.find(k);
    if (it != b.end()) dot += static_cast<double>(v) * it->second;
  }
  for (const auto& [k, v] : b) nb += static_cast<double>(v) * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double token_f1(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0.0;
  std::unordered_map<std::string, int> ca, cb;
  for (const auto& t : a) ++ca[t];
  for (const auto& t : b) ++cb[t];
  double overlap = 0.0;
  for (const auto& [t, c] : ca) {
    auto it = cb.find(t);
    if (it != cb.end()) overlap += std::min(c, it->second);
  }
  if (overlap == 0.0) return 0.0;
  const double p = overlap / static_cast<double>(a.size());
  const double r = overlap / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace detail

// Symmetric caption similarity in [0,1]. Empty captions are similar only to
// other empty captions.
inline double similarity(std::string_view a, std::string_view b,
                         const SimilarityConfig& cfg = {}) {
  cfg.validate();
  const std::string na = normalize_spacing(a), nb = normalize_spacing(b);
  if (na.empty() || nb.empty()) return na.empty() && nb.empty() ? 1.0 : 0.0;
  const double char_cos =
      detail::count_cosine(detail::char_ngrams(na, cfg.char_n), detail::char_ngrams(nb, cfg.char_n));
  const double tok = detail::token_f1(tokenize(a), tokenize(b));
  return cfg.w_char * char_cos + cfg.w_token * tok;
}

struct PoolEntry {
  std::string model_id;
  std::string caption;
};

// All captions proposed for one video, in model priority order.
struct CandidatePool {
  std::string video_id;
  std::vector<PoolEntry> entries;
};

struct VoteAudit {
  std::vector<std::vector<double>> matrix;  // pairwise similarities
  std::vector<double> averages;             // mean over the other entries
  std::size_t winner = 0;
};

inline std::vector<std::vector<double>> similarity_matrix(const CandidatePool& pool,
                                                          const SimilarityConfig& cfg = {}) {
  const std::size_t n = pool.entries.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = similarity(pool.entries[i].caption, pool.entries[j].caption, cfg);
      m[i][j] = s;
      m[j][i] = s;
    }
  return m;
}

// Index of the row with the highest mean over off-diagonal entries; ties go
// to the earliest row. A 1x1 matrix scores 1 by convention.
inline std::size_t argmax_row_mean(const std::vector<std::vector<double>>& matrix,
                                   std::vector<double>* averages = nullptr) {
  const std::size_t n = matrix.size();
  if (n == 0) throw InputError("argmax_row_mean: empty matrix");
  std::size_t best = 0;
  double best_avg = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double avg = 1.0;
    if (n > 1) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) acc += matrix[i][j];
      avg = acc / static_cast<double>(n - 1);
    }
    if (averages) averages->push_back(avg);
    if (avg > best_avg) {
      best_avg = avg;
      best = i;
    }
  }
  return best;
}

// Consensus vote: the entry with the highest average similarity to the rest
// of the pool wins; self-similarity is excluded from the average.
inline PoolEntry vote(const CandidatePool& pool, const SimilarityConfig& cfg = {},
                      VoteAudit* audit = nullptr) {
  if (pool.entries.empty()) throw InputError("vote: empty pool for video " + pool.video_id);
  auto matrix = similarity_matrix(pool, cfg);
  std::vector<double> averages;
  const std::size_t winner = argmax_row_mean(matrix, &averages);
  if (audit) {
    audit->matrix = std::move(matrix);
    audit->averages = std::move(averages);
    audit->winner = winner;
  }
  return pool.entries[winner];
}

struct ModelCaptions {
  std::string model_id;
  std::map<std::string, std::string> captions;  // video_id -> caption
};

struct VoteOutcome {
  std::map<std::string, std::string> captions;           // fused video_id -> caption
  std::map<std::string, CandidatePool> pools;            // per-video pool actually voted on
  std::map<std::string, VoteAudit> audits;
  std::map<std::string, std::string> winner_models;      // video_id -> winning model
};

// Per-video pools assembled in input order (which also fixes tie-breaking),
// then vote applied. Every model must cover the same video ids.
inline VoteOutcome vote_corpus(const std::vector<ModelCaptions>& models,
                               const SimilarityConfig& cfg = {}) {
  if (models.empty()) throw InputError("vote_corpus: no model caption sets supplied");
  const auto& base = models.front().captions;
  for (const auto& m : models) {
    if (m.captions.size() != base.size())
      throw InputError("vote_corpus: model " + m.model_id + " covers a different video set");
    for (const auto& [video_id, caption] : base)
      if (!m.captions.count(video_id))
        throw InputError("vote_corpus: model " + m.model_id + " is missing video " + video_id);
  }
  VoteOutcome out;
  for (const auto& [video_id, caption] : base) {
    CandidatePool pool{video_id, {}};
    for (const auto& m : models) pool.entries.push_back({m.model_id, m.captions.at(video_id)});
    VoteAudit audit;
    const PoolEntry winner = vote(pool, cfg, &audit);
    out.captions[video_id] = winner.caption;
    out.winner_models[video_id] = winner.model_id;
    out.pools[video_id] = std::move(pool);
    out.audits[video_id] = std::move(audit);
  }
  return out;
}

// Length routing (strictly-below-threshold videos go to the short-video
// model); the output covers exactly the videos in `lengths`.
inline std::map<std::string, std::string> fuse_by_length(
    const std::map<std::string, std::string>& short_captions,
    const std::map<std::string, std::string>& long_captions,
    const std::map<std::string, std::size_t>& lengths, std::size_t threshold = 74) {
  if (threshold < 1) throw ConfigError("fuse_by_length: threshold must be >= 1");
  std::map<std::string, std::string> out;
  for (const auto& [video_id, n_frames] : lengths) {
    const bool is_short = n_frames < threshold;
    const auto& pool = is_short ? short_captions : long_captions;
    auto it = pool.find(video_id);
    if (it == pool.end())
      throw InputError("fuse_by_length: video " + video_id + " missing from its " +
                       (is_short ? "short" : "long") + "-route pool");
    out[video_id] = it->second;
  }
  return out;
}

}  // namespace intentcap
