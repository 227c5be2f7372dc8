#pragma once

// Sentence-level BLEU-4, chrF++ and ROUGE-L over whitespace-tokenized
// text. Corpus scores are the arithmetic mean of the per-pair scores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mergeforge/error.hpp"
#include "mergeforge/parallel.hpp"

namespace mergeforge {

struct TokenizeOptions {
  bool lowercase = false;
};

inline bool is_space(unsigned char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

inline std::vector<std::string> tokenize(std::string_view text, const TokenizeOptions& opts = {}) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) {
      std::string tok(text.substr(start, i - start));
      if (opts.lowercase) {
        for (char& c : tok) {
          if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        }
      }
      tokens.push_back(std::move(tok));
    }
  }
  return tokens;
}

/// UTF-8 code points of `text` with whitespace removed. Bytes that do not
/// form a valid sequence are kept as single units (0xDC00 + byte).
inline std::u32string code_points_without_space(std::string_view text) {
  std::u32string out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    if (is_space(b0)) {
      ++i;
      continue;
    }
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 >= 0xC2 && b0 <= 0xDF) {
      len = 2;
      cp = b0 & 0x1Fu;
    } else if (b0 >= 0xE0 && b0 <= 0xEF) {
      len = 3;
      cp = b0 & 0x0Fu;
    } else if (b0 >= 0xF0 && b0 <= 0xF4) {
      len = 4;
      cp = b0 & 0x07u;
    } else if (b0 >= 0x80) {
      len = 0;
    }
    bool valid = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; valid && k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0u) != 0x80u) valid = false;
      cp = (cp << 6) | (b & 0x3Fu);
    }
    if (valid) {
      out.push_back(cp);
      i += len;
    } else {
      out.push_back(static_cast<char32_t>(0xDC00u + b0));
      ++i;
    }
  }
  return out;
}

namespace detail {

template <typename Seq>
std::map<Seq, std::size_t> ngram_counts(const Seq& seq, std::size_t n) {
  std::map<Seq, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[Seq(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

struct NgramStats {
  std::size_t matches = 0;
  std::size_t hyp_total = 0;
  std::size_t ref_total = 0;
};

template <typename Seq>
NgramStats ngram_stats(const Seq& hyp, const Seq& ref, std::size_t n) {
  NgramStats s;
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  for (const auto& [g, c] : h) {
    s.hyp_total += c;
    if (auto it = r.find(g); it != r.end()) s.matches += std::min(c, it->second);
  }
  for (const auto& [_, c] : r) s.ref_total += c;
  return s;
}

}  // namespace detail

/// Sentence BLEU-4: geometric mean of clipped n-gram precisions (n = 1..4)
/// times the brevity penalty. Orders n >= 2 with no matches use add-one
/// smoothing on numerator and denominator.
inline double bleu4(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  if (ref.empty()) fail(ErrorKind::EmptyReference, "BLEU reference has no tokens");
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto s = detail::ngram_stats(hyp, ref, n);
    double num = static_cast<double>(s.matches);
    double den = static_cast<double>(s.hyp_total);
    if (s.matches == 0) {
      if (n == 1) return 0.0;
      num += 1.0;
      den += 1.0;
    }
    log_sum += std::log(num / den);
  }
  const double ratio = static_cast<double>(ref.size()) / static_cast<double>(hyp.size());
  const double bp = std::exp(std::min(0.0, 1.0 - ratio));
  return bp * std::exp(log_sum / 4.0);
}

/// chrF++ on a 0..100 scale: the mean F-beta (beta = 2) over character
/// n-grams 1..6 (whitespace removed) and word n-grams 1..2. Orders with no
/// n-grams on either side are skipped.
inline double chrf_pp(std::string_view hyp, std::string_view ref) {
  constexpr double kBeta2 = 4.0;
  const auto ref_words = tokenize(ref);
  if (ref_words.empty()) fail(ErrorKind::EmptyReference, "chrF++ reference is empty");
  const auto hyp_words = tokenize(hyp);
  const auto hyp_chars = code_points_without_space(hyp);
  const auto ref_chars = code_points_without_space(ref);

  double f_sum = 0.0;
  std::size_t orders = 0;
  auto add = [&](const detail::NgramStats& s) {
    if (s.hyp_total == 0 && s.ref_total == 0) return;
    ++orders;
    if (s.matches == 0) return;
    const double p = static_cast<double>(s.matches) / static_cast<double>(s.hyp_total);
    const double r = static_cast<double>(s.matches) / static_cast<double>(s.ref_total);
    f_sum += (1.0 + kBeta2) * p * r / (kBeta2 * p + r);
  };
  for (std::size_t n = 1; n <= 6; ++n) add(detail::ngram_stats(hyp_chars, ref_chars, n));
  for (std::size_t n = 1; n <= 2; ++n) add(detail::ngram_stats(hyp_words, ref_words, n));
  return orders == 0 ? 0.0 : 100.0 * f_sum / static_cast<double>(orders);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// ROUGE-L F1 from the longest common subsequence.
inline double rouge_l(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  if (ref.empty()) fail(ErrorKind::EmptyReference, "ROUGE-L reference has no tokens");
  if (hyp.empty()) return 0.0;
  const auto l = static_cast<double>(lcs_length(hyp, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(hyp.size());
  const double r = l / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

enum class Metric { Bleu4, ChrfPP, RougeL };

constexpr std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::Bleu4: return "bleu4";
    case Metric::ChrfPP: return "chrfpp";
    case Metric::RougeL: return "rougel";
  }
  return "?";
}

inline Metric parse_metric(std::string_view name) {
  if (name == "bleu4") return Metric::Bleu4;
  if (name == "chrfpp") return Metric::ChrfPP;
  if (name == "rougel") return Metric::RougeL;
  fail(ErrorKind::InvalidPlan, "unknown metric '" + std::string(name) + "'");
}

inline double score_pair(Metric m, std::string_view hyp, std::string_view ref, const TokenizeOptions& opts = {}) {
  switch (m) {
    case Metric::Bleu4: return bleu4(tokenize(hyp, opts), tokenize(ref, opts));
    case Metric::RougeL: return rouge_l(tokenize(hyp, opts), tokenize(ref, opts));
    case Metric::ChrfPP:
      if (opts.lowercase) {
        const auto lower = [](std::string_view s) {
          std::string out(s);
          for (char& c : out) {
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
          }
          return out;
        };
        return chrf_pp(lower(hyp), lower(ref));
      }
      return chrf_pp(hyp, ref);
  }
  return 0.0;
}

struct ScoredCorpus {
  std::vector<Metric> metrics;
  std::vector<std::vector<double>> per_pair;  // [pair][metric]
  std::vector<double> aggregate;              // [metric], mean over pairs
};

inline ScoredCorpus score_corpus(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                 const std::vector<Metric>& metrics, const TokenizeOptions& opts = {}) {
  if (hyps.size() != refs.size()) {
    fail(ErrorKind::LengthMismatch, std::to_string(hyps.size()) + " hypotheses but " +
                                        std::to_string(refs.size()) + " references");
  }
  ScoredCorpus out;
  out.metrics = metrics;
  out.per_pair.assign(hyps.size(), std::vector<double>(metrics.size(), 0.0));
  parallel_for(hyps.size(), [&](std::size_t i) {
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      try {
        out.per_pair[i][m] = score_pair(metrics[m], hyps[i], refs[i], opts);
      } catch (const Error& e) {
        throw Error(e.kind(), "line " + std::to_string(i + 1) + ": " + e.detail());
      }
    }
  });
  out.aggregate.assign(metrics.size(), 0.0);
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    double s = 0.0;
    for (const auto& row : out.per_pair) s += row[m];
    out.aggregate[m] = hyps.empty() ? 0.0 : s / static_cast<double>(hyps.size());
  }
  return out;
}

}  // namespace mergeforge
