#include "xlsum/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "xlsum/errors.hpp"

namespace xlsum::metrics {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

std::vector<std::string> split_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      ++i;
      continue;
    }
    const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

// Greedy longest match against the unit list, one word at a time; a
// character with no matching unit becomes its own unit.
std::vector<std::string> split_subwords(std::string_view text, const std::vector<std::string>& units) {
  std::vector<std::string> out;
  std::size_t longest = 1;
  for (const auto& u : units) longest = std::max(longest, u.size());
  for (const auto& word : split_words(text)) {
    std::size_t i = 0;
    while (i < word.size()) {
      std::size_t take = 0;
      for (std::size_t len = std::min(longest, word.size() - i); len > 0; --len) {
        if (std::binary_search(units.begin(), units.end(), word.substr(i, len))) {
          take = len;
          break;
        }
      }
      if (take == 0) take = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
      out.push_back(word.substr(i, take));
      i += take;
    }
  }
  return out;
}

RougeScore from_counts(double overlap, double cand_total, double ref_total) {
  RougeScore s;
  s.precision = cand_total > 0 ? overlap / cand_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = (s.precision + s.recall) > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> units, int n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  const auto len = static_cast<std::size_t>(n);
  if (units.size() < len) return counts;
  for (std::size_t i = 0; i + len <= units.size(); ++i) {
    counts[std::vector<std::string>(units.begin() + static_cast<std::ptrdiff_t>(i),
                                    units.begin() + static_cast<std::ptrdiff_t>(i + len))]++;
  }
  return counts;
}

// Sum after sorting so the result is independent of input order.
double order_free_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

std::string format_edge(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

Segmentation Segmentation::subword(std::vector<std::string> units) {
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());
  return {SegmentationKind::Subword, std::move(units)};
}

Segmentation parse_segmentation(std::string_view name) {
  if (name == "word") return Segmentation::word();
  if (name == "character" || name == "char") return Segmentation::character();
  throw ContractError("unknown segmentation mode '" + std::string(name) + "' (expected word|character)");
}

std::vector<std::string> segment(std::string_view text, const Segmentation& seg) {
  switch (seg.kind) {
    case SegmentationKind::Word:
      return split_words(text);
    case SegmentationKind::Character:
      return split_chars(text);
    case SegmentationKind::Subword:
      return split_subwords(text, seg.subword_units);
  }
  return {};
}

RougeScore rouge_n_units(std::span<const std::string> candidate, std::span<const std::string> reference,
                         int n) {
  if (n != 1 && n != 2) throw ContractError("rouge_n: n must be 1 or 2, got " + std::to_string(n));
  if (candidate.empty() || reference.empty()) {
    RougeScore s;
    s.empty_input = true;
    return s;
  }
  const auto len = static_cast<std::size_t>(n);
  if (candidate.size() < len && reference.size() < len) {
    // Neither side has an n-gram: identical short texts still match fully.
    const bool same = std::equal(candidate.begin(), candidate.end(), reference.begin(), reference.end());
    return from_counts(same ? 1.0 : 0.0, 1.0, 1.0);
  }
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  std::size_t overlap = 0, cand_total = 0, ref_total = 0;
  for (const auto& [gram, c] : cand) {
    cand_total += c;
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [gram, c] : ref) ref_total += c;
  return from_counts(static_cast<double>(overlap), static_cast<double>(cand_total),
                     static_cast<double>(ref_total));
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l_units(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) {
    RougeScore s;
    s.empty_input = true;
    return s;
  }
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  return from_counts(lcs, static_cast<double>(candidate.size()), static_cast<double>(reference.size()));
}

RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n, const Segmentation& seg) {
  const auto c = segment(candidate, seg);
  const auto r = segment(reference, seg);
  return rouge_n_units(c, r, n);
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference, const Segmentation& seg) {
  const auto c = segment(candidate, seg);
  const auto r = segment(reference, seg);
  return rouge_l_units(c, r);
}

CorpusReport corpus_report(const std::vector<std::pair<std::string, std::string>>& pairs,
                           const Segmentation& seg, const std::vector<double>& edges) {
  if (pairs.empty()) throw ContractError("corpus_report: empty pair list");
  if (edges.empty() || !std::is_sorted(edges.begin(), edges.end())) {
    throw ContractError("corpus_report: bucket edges must be non-empty and ascending");
  }
  struct Row {
    std::vector<double> r1, r2, rl, cand_len;
  };
  Row all;
  std::vector<double> ref_len;
  std::vector<Row> per_bucket(edges.size());
  for (const auto& [cand_text, ref_text] : pairs) {
    const auto cand = segment(cand_text, seg);
    const auto ref = segment(ref_text, seg);
    const double r1 = rouge_n_units(cand, ref, 1).f1;
    const double r2 = rouge_n_units(cand, ref, 2).f1;
    const double rl = rouge_l_units(cand, ref).f1;
    const auto len = static_cast<double>(ref.size());
    auto push = [&](Row& row) {
      row.r1.push_back(r1);
      row.r2.push_back(r2);
      row.rl.push_back(rl);
      row.cand_len.push_back(static_cast<double>(cand.size()));
    };
    push(all);
    ref_len.push_back(len);
    for (std::size_t b = edges.size(); b-- > 0;) {
      if (len >= edges[b]) {
        push(per_bucket[b]);
        break;
      }
    }
  }
  CorpusReport report;
  report.count = pairs.size();
  report.rouge1 = order_free_mean(all.r1);
  report.rouge2 = order_free_mean(all.r2);
  report.rougeL = order_free_mean(all.rl);
  report.mean_candidate_length = order_free_mean(all.cand_len);
  report.mean_reference_length = order_free_mean(ref_len);
  for (std::size_t b = 0; b < edges.size(); ++b) {
    BucketStats s;
    s.lo = edges[b];
    s.hi = b + 1 < edges.size() ? edges[b + 1] : std::numeric_limits<double>::infinity();
    s.count = per_bucket[b].r1.size();
    s.rouge1 = order_free_mean(per_bucket[b].r1);
    s.rouge2 = order_free_mean(per_bucket[b].r2);
    s.rougeL = order_free_mean(per_bucket[b].rl);
    s.mean_candidate_length = order_free_mean(per_bucket[b].cand_len);
    report.buckets.push_back(s);
  }
  return report;
}

std::string format_report_table(const CorpusReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(12) << "bucket" << std::right << std::setw(8) << "count" << std::setw(9) << "R1"
     << std::setw(9) << "R2" << std::setw(9) << "RL";
  if (report.xsim) os << std::setw(9) << "XSIM";
  os << '\n';
  os << std::left << std::setw(12) << "all" << std::right << std::setw(8) << report.count << std::setw(9)
     << report.rouge1 * 100 << std::setw(9) << report.rouge2 * 100 << std::setw(9) << report.rougeL * 100;
  if (report.xsim) os << std::setw(9) << *report.xsim * 100;
  os << '\n';
  for (const auto& b : report.buckets) {
    const std::string label = "[" + format_edge(b.lo) + "," + format_edge(b.hi) + ")";
    os << std::left << std::setw(12) << label << std::right << std::setw(8) << b.count << std::setw(9)
       << b.rouge1 * 100 << std::setw(9) << b.rouge2 * 100 << std::setw(9) << b.rougeL * 100 << '\n';
  }
  return os.str();
}

std::string format_report_kv(const CorpusReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "count=" << report.count << '\n';
  os << "rouge1=" << report.rouge1 * 100 << '\n';
  os << "rouge2=" << report.rouge2 * 100 << '\n';
  os << "rougeL=" << report.rougeL * 100 << '\n';
  if (report.xsim) os << "xsim=" << *report.xsim * 100 << '\n';
  os << "mean_candidate_length=" << report.mean_candidate_length << '\n';
  os << "mean_reference_length=" << report.mean_reference_length << '\n';
  for (const auto& b : report.buckets) {
    const std::string key = "bucket_" + format_edge(b.lo) + "_" + format_edge(b.hi);
    os << key << ".count=" << b.count << '\n';
    os << key << ".rouge1=" << b.rouge1 * 100 << '\n';
    os << key << ".rouge2=" << b.rouge2 * 100 << '\n';
    os << key << ".rougeL=" << b.rougeL * 100 << '\n';
  }
  return os.str();
}

std::string format_bucket_csv(const CorpusReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "bucket_lo,bucket_hi,count,rouge1,rouge2,rougeL,mean_candidate_length\n";
  for (const auto& b : report.buckets) {
    os << format_edge(b.lo) << ',' << format_edge(b.hi) << ',' << b.count << ',' << b.rouge1 * 100 << ','
       << b.rouge2 * 100 << ',' << b.rougeL * 100 << ',' << b.mean_candidate_length << '\n';
  }
  return os.str();
}

}  // namespace xlsum::metrics
