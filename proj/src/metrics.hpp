#pragma once

// Corpus-level text metrics: exact match, BLEU-1..4, ROUGE-L, CIDEr.
// All of them normalize text the same way (lowercase, punctuation stripped,
// whitespace collapsed) and report on a x100 scale except CIDEr (x10).

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace argus {

struct EvalPair {
  std::string candidate;
  std::vector<std::string> references;
};

inline std::string normalize_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char raw : s) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (std::ispunct(c)) continue;
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

inline std::vector<std::string> metric_tokens(const std::string& s) {
  std::vector<std::string> toks;
  std::string norm = normalize_text(s);
  size_t i = 0;
  while (i < norm.size()) {
    size_t j = norm.find(' ', i);
    if (j == std::string::npos) j = norm.size();
    if (j > i) toks.push_back(norm.substr(i, j - i));
    i = j + 1;
  }
  return toks;
}

namespace detail {

inline void check_pairs(const std::vector<EvalPair>& pairs, const char* who) {
  if (pairs.empty())
    throw EmptyInputError(std::string(who) + ": empty corpus");
  for (const EvalPair& p : pairs)
    if (p.references.empty())
      throw EmptyInputError(std::string(who) + ": pair has no references");
}

// n-grams keyed by joining tokens with an unprintable separator.
inline std::unordered_map<std::string, long long> ngram_counts(
    const std::vector<std::string>& toks, int n) {
  std::unordered_map<std::string, long long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (int k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += toks[i + k];
    }
    ++counts[key];
  }
  return counts;
}

inline long long lcs_len(const std::vector<std::string>& a,
                         const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<long long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Mean taken over a sorted copy so pair order cannot perturb the float sum.
inline double order_free_mean(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

}  // namespace detail

inline double exact_match(const std::vector<EvalPair>& pairs) {
  detail::check_pairs(pairs, "exact_match");
  long long hits = 0;
  for (const EvalPair& p : pairs) {
    std::string cand = normalize_text(p.candidate);
    for (const std::string& r : p.references) {
      if (normalize_text(r) == cand) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pairs.size());
}

// Corpus BLEU: clipped modified n-gram precision accumulated over the corpus,
// geometric mean over orders 1..n, brevity penalty exp(1 - r/c). A zero
// precision at order >= 2 gets add-1 smoothing on both counts; a zero unigram
// precision makes the whole score zero.
inline double bleu_n(const std::vector<EvalPair>& pairs, int n) {
  if (n < 1 || n > 4) throw InvalidConfig("bleu: order must be in 1..4");
  detail::check_pairs(pairs, "bleu");
  std::array<long long, 4> num{}, den{};
  long long c_total = 0, r_total = 0;
  for (const EvalPair& p : pairs) {
    std::vector<std::string> cand = metric_tokens(p.candidate);
    std::vector<std::vector<std::string>> refs;
    refs.reserve(p.references.size());
    for (const std::string& r : p.references) refs.push_back(metric_tokens(r));

    long long clen = static_cast<long long>(cand.size());
    c_total += clen;
    long long best_r = static_cast<long long>(refs[0].size());
    for (const auto& r : refs) {
      long long rl = static_cast<long long>(r.size());
      long long d_new = std::llabs(rl - clen), d_old = std::llabs(best_r - clen);
      if (d_new < d_old || (d_new == d_old && rl < best_r)) best_r = rl;
    }
    r_total += best_r;

    for (int k = 1; k <= n; ++k) {
      auto cc = detail::ngram_counts(cand, k);
      std::vector<std::unordered_map<std::string, long long>> rcs;
      for (const auto& r : refs) rcs.push_back(detail::ngram_counts(r, k));
      for (const auto& [g, c] : cc) {
        long long clip = 0;
        for (const auto& rc : rcs) {
          auto it = rc.find(g);
          if (it != rc.end()) clip = std::max(clip, it->second);
        }
        num[k - 1] += std::min(c, clip);
      }
      den[k - 1] += std::max<long long>(0, clen - k + 1);
    }
  }
  if (c_total == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    double p;
    if (num[k - 1] == 0) {
      if (k == 1) return 0.0;
      p = (static_cast<double>(num[k - 1]) + 1.0) /
          (static_cast<double>(den[k - 1]) + 1.0);
    } else {
      p = static_cast<double>(num[k - 1]) / static_cast<double>(den[k - 1]);
    }
    log_sum += std::log(p);
  }
  double bp = c_total > r_total
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(r_total) /
                                       static_cast<double>(c_total));
  return bp * std::exp(log_sum / n) * 100.0;
}

inline double rouge_l(const std::vector<EvalPair>& pairs) {
  detail::check_pairs(pairs, "rouge_l");
  const double beta2 = 1.2 * 1.2;
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const EvalPair& p : pairs) {
    std::vector<std::string> cand = metric_tokens(p.candidate);
    double best = 0.0;
    for (const std::string& r : p.references) {
      std::vector<std::string> ref = metric_tokens(r);
      long long lcs = detail::lcs_len(cand, ref);
      if (lcs == 0) continue;
      double prec = static_cast<double>(lcs) / static_cast<double>(cand.size());
      double rec = static_cast<double>(lcs) / static_cast<double>(ref.size());
      double f = (1.0 + beta2) * prec * rec / (rec + beta2 * prec);
      best = std::max(best, f);
    }
    scores.push_back(best);
  }
  return 100.0 * detail::order_free_mean(std::move(scores));
}

struct CiderFlags {
  // Set when the corpus has fewer than two distinct references, which makes
  // every idf weight zero; the score is still returned.
  bool degenerate_corpus = false;
};

inline std::vector<double> cider_pair_scores(const std::vector<EvalPair>& pairs,
                                             CiderFlags* flags = nullptr) {
  detail::check_pairs(pairs, "cider");
  constexpr int kOrders = 4;

  // Document frequency: the number of pairs whose reference set contains the
  // n-gram at least once.
  std::array<std::unordered_map<std::string, long long>, kOrders> df;
  std::unordered_set<std::string> distinct_refs;
  for (const EvalPair& p : pairs) {
    std::array<std::unordered_set<std::string>, kOrders> seen;
    for (const std::string& r : p.references) {
      distinct_refs.insert(normalize_text(r));
      std::vector<std::string> toks = metric_tokens(r);
      for (int k = 0; k < kOrders; ++k)
        for (const auto& [g, c] : detail::ngram_counts(toks, k + 1))
          seen[k].insert(g);
    }
    for (int k = 0; k < kOrders; ++k)
      for (const std::string& g : seen[k]) ++df[k][g];
  }
  if (flags) flags->degenerate_corpus = distinct_refs.size() < 2;

  double log_n = std::log(static_cast<double>(pairs.size()));
  auto idf = [&](int k, const std::string& g) {
    auto it = df[k].find(g);
    double d = it == df[k].end() ? 0.0 : static_cast<double>(it->second);
    return log_n - std::log(std::max(1.0, d));
  };
  struct Vec {
    std::array<std::unordered_map<std::string, double>, kOrders> w;
    std::array<double, kOrders> norm{};
  };
  auto to_vec = [&](const std::vector<std::string>& toks) {
    Vec v;
    for (int k = 0; k < kOrders; ++k) {
      for (const auto& [g, c] : detail::ngram_counts(toks, k + 1)) {
        double x = static_cast<double>(c) * idf(k, g);
        v.w[k][g] = x;
        v.norm[k] += x * x;
      }
      v.norm[k] = std::sqrt(v.norm[k]);
    }
    return v;
  };

  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const EvalPair& p : pairs) {
    Vec cv = to_vec(metric_tokens(p.candidate));
    std::array<double, kOrders> per_order{};
    for (const std::string& r : p.references) {
      Vec rv = to_vec(metric_tokens(r));
      for (int k = 0; k < kOrders; ++k) {
        if (cv.norm[k] == 0.0 || rv.norm[k] == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, x] : cv.w[k]) {
          auto it = rv.w[k].find(g);
          if (it != rv.w[k].end()) dot += x * it->second;
        }
        per_order[k] += dot / (cv.norm[k] * rv.norm[k]);
      }
    }
    double s = 0.0;
    for (int k = 0; k < kOrders; ++k) s += per_order[k];
    s = s / kOrders / static_cast<double>(p.references.size()) * 10.0;
    scores.push_back(s);
  }
  return scores;
}

inline double cider(const std::vector<EvalPair>& pairs,
                    CiderFlags* flags = nullptr) {
  return detail::order_free_mean(cider_pair_scores(pairs, flags));
}

struct MetricReport {
  double em = 0.0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double bleu3 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  bool degenerate_corpus = false;
};

inline MetricReport report_metrics(const std::vector<EvalPair>& pairs) {
  MetricReport r;
  r.em = exact_match(pairs);
  r.bleu1 = bleu_n(pairs, 1);
  r.bleu2 = bleu_n(pairs, 2);
  r.bleu3 = bleu_n(pairs, 3);
  r.bleu4 = bleu_n(pairs, 4);
  r.rouge_l = rouge_l(pairs);
  CiderFlags cf;
  r.cider = cider(pairs, &cf);
  r.degenerate_corpus = cf.degenerate_corpus;
  return r;
}

inline std::string metrics_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["em"] = r.em;
  j["bleu1"] = r.bleu1;
  j["bleu2"] = r.bleu2;
  j["bleu3"] = r.bleu3;
  j["bleu4"] = r.bleu4;
  j["rouge_l"] = r.rouge_l;
  j["cider"] = r.cider;
  return j.dump(2);
}

// One markdown table. METEOR is deliberately absent: it needs an external
// synonym resource this artifact does not ship.
inline std::string metrics_markdown(const MetricReport& r) {
  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return std::string(buf);
  };
  std::string out;
  out += "| EM | Bleu-1 | Bleu-4 | Rouge-L | CIDEr |\n";
  out += "|---:|---:|---:|---:|---:|\n";
  out += "| " + cell(r.em) + " | " + cell(r.bleu1) + " | " + cell(r.bleu4) +
         " | " + cell(r.rouge_l) + " | " + cell(r.cider) + " |\n";
  return out;
}

}  // namespace argus
