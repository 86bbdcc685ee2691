#include "pscs/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace pscs {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

}  // namespace

double success_rate_at_k(std::span<const Rank> ranks, std::int64_t k) {
  if (ranks.empty()) throw InvalidArgument("success_rate_at_k: no queries");
  if (k < 0) throw InvalidArgument("success_rate_at_k: k must be >= 0");
  std::size_t hit = 0;
  for (const auto& r : ranks)
    if (r && *r <= k) ++hit;
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

double mrr(std::span<const Rank> ranks, std::int64_t k) {
  if (ranks.empty()) throw InvalidArgument("mrr: no queries");
  if (k < 0) throw InvalidArgument("mrr: k must be >= 0");
  double sum = 0.0;
  for (const auto& r : ranks) {
    if (r && *r < 1) throw InvalidArgument("mrr: ranks start at 1");
    if (r && *r <= k) sum += 1.0 / static_cast<double>(*r);
  }
  return sum / static_cast<double>(ranks.size());
}

double random_success_rate(std::int64_t k, std::int64_t n) {
  if (n <= 0) throw InvalidArgument("random_success_rate: empty pool");
  return static_cast<double>(std::clamp<std::int64_t>(k, 0, n)) / static_cast<double>(n);
}

double random_mrr(std::int64_t k, std::int64_t n) {
  if (n <= 0) throw InvalidArgument("random_mrr: empty pool");
  double h = 0.0;
  for (std::int64_t r = 1; r <= std::min(k, n); ++r) h += 1.0 / static_cast<double>(r);
  return h / static_cast<double>(n);
}

std::int64_t rank_of(std::span<const float> scores, std::span<const std::string> ids, std::size_t truth) {
  if (truth >= scores.size() || ids.size() != scores.size()) throw InvalidArgument("rank_of: bad arguments");
  const float st = scores[truth];
  const std::string& it = ids[truth];
  std::int64_t ahead = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > st || (scores[i] == st && i != truth && ids[i] < it)) ++ahead;
  return ahead + 1;
}

// ---------------------------------------------------------------- reports

void check_invariants(EvalReport& r) {
  auto& v = r.violations;
  v.clear();
  auto in_unit = [&](double x, const std::string& what) {
    if (!(x >= 0.0 && x <= 1.0)) v.push_back(what + " outside [0, 1]: " + fixed(x, 6));
  };
  double prev = -1.0;
  std::int64_t prev_k = 0;
  for (const auto& [k, sr] : r.success_rate) {
    in_unit(sr, "SR@" + std::to_string(k));
    if (sr < prev)
      v.push_back("SR@" + std::to_string(k) + " < SR@" + std::to_string(prev_k) + " (not monotone in k)");
    prev = sr;
    prev_k = k;
  }
  in_unit(r.mrr, "MRR");
  if (!r.per_query.empty()) {
    std::vector<Rank> ranks;
    for (const auto& q : r.per_query) ranks.push_back(q.rank);
    const double sr = success_rate_at_k(ranks, r.mrr_k);
    if (r.mrr > sr + 1e-12) v.push_back("MRR exceeds SR@" + std::to_string(r.mrr_k));
    for (const auto& q : r.per_query)
      if (q.rank && (*q.rank < 1 || *q.rank > static_cast<std::int64_t>(r.pool)))
        v.push_back("rank of " + q.id + " outside the pool");
  }
  for (const auto& b : r.breakdown) {
    in_unit(b.success_at_10, "bucket SR@10");
    in_unit(b.mrr, "bucket MRR");
  }
}

EvalReport summarize(std::vector<QueryOutcome> outcomes, std::span<const std::int64_t> ks, std::size_t pool,
                     std::int64_t mrr_k) {
  if (outcomes.empty()) throw InvalidArgument("evaluate: empty test set");
  EvalReport r;
  r.pool = pool;
  r.ks.assign(ks.begin(), ks.end());
  std::sort(r.ks.begin(), r.ks.end());
  r.ks.erase(std::unique(r.ks.begin(), r.ks.end()), r.ks.end());
  r.mrr_k = mrr_k;
  r.per_query = std::move(outcomes);
  std::vector<Rank> ranks;
  for (const auto& q : r.per_query) ranks.push_back(q.rank);
  for (auto k : r.ks) r.success_rate[k] = success_rate_at_k(ranks, k);
  r.mrr = mrr(ranks, mrr_k);
  r.breakdown = length_breakdown(r, kDefaultBuckets);
  check_invariants(r);
  return r;
}

std::vector<LengthBucket> length_breakdown(const EvalReport& report,
                                           std::span<const std::pair<std::size_t, std::size_t>> buckets) {
  std::vector<LengthBucket> out;
  for (const auto& [lo, hi] : buckets) {
    if (lo > hi) throw InvalidArgument("length_breakdown: bucket bounds reversed");
    LengthBucket b;
    b.lo = lo;
    b.hi = hi;
    std::vector<Rank> ranks;
    for (const auto& q : report.per_query)
      if (q.words >= lo && q.words <= hi) ranks.push_back(q.rank);
    b.queries = ranks.size();
    if (!ranks.empty()) {
      b.success_at_10 = success_rate_at_k(ranks, 10);
      b.mrr = mrr(ranks, 10);
    }
    b.low_confidence = b.queries < 10;
    out.push_back(b);
  }
  return out;
}

std::string EvalReport::to_json(bool include_per_query, bool include_timing) const {
  nlohmann::json j;
  j["ablation"] = ablation;
  j["pool"] = pool;
  j["queries"] = per_query.size();
  nlohmann::json sr = nlohmann::json::object();
  for (const auto& [k, v] : success_rate) sr[std::to_string(k)] = v;
  j["success_rate"] = sr;
  j["mrr_k"] = mrr_k;
  j["mrr"] = mrr;
  if (include_timing) j["mean_query_ms"] = mean_query_ms;
  nlohmann::json buckets = nlohmann::json::array();
  for (const auto& b : breakdown)
    buckets.push_back({{"lo", b.lo},
                       {"hi", b.hi},
                       {"queries", b.queries},
                       {"success_at_10", b.success_at_10},
                       {"mrr", b.mrr},
                       {"low_confidence", b.low_confidence}});
  j["breakdown"] = buckets;
  j["violations"] = violations;
  if (include_per_query) {
    nlohmann::json pq = nlohmann::json::array();
    for (const auto& q : per_query)
      pq.push_back({{"id", q.id}, {"words", q.words}, {"rank", q.rank ? nlohmann::json(*q.rank) : nlohmann::json()}});
    j["per_query"] = pq;
  }
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "pool " << pool << ", queries " << per_query.size() << ", ablation " << ablation << '\n';
  std::string head, row;
  for (const auto& [k, v] : success_rate) {
    head += pad("SR@" + std::to_string(k), 9);
    row += pad(fixed(v), 9);
  }
  head += pad("MRR@" + std::to_string(mrr_k), 9) + pad("ms/query", 10);
  row += pad(fixed(mrr), 9) + pad(fixed(mean_query_ms, 3), 10);
  out << head << '\n' << row << '\n';
  if (!breakdown.empty()) {
    out << '\n' << pad("words", 8, true) << pad("queries", 9) << pad("SR@10", 9) << pad("MRR@10", 9) << '\n';
    for (const auto& b : breakdown) {
      out << pad(std::to_string(b.lo) + "-" + std::to_string(b.hi), 8, true) << pad(std::to_string(b.queries), 9)
          << pad(fixed(b.success_at_10), 9) << pad(fixed(b.mrr), 9) << (b.low_confidence ? "  (low confidence)" : "")
          << '\n';
    }
  }
  for (const auto& v : violations) out << "INVARIANT FAILED: " << v << '\n';
  return out.str();
}

// ---------------------------------------------------------------- evaluation

EvalReport evaluate_index(const EncodedCorpus& test, const SearchIndex& index, PscsModel& model,
                          std::span<const std::int64_t> ks, std::int64_t mrr_k) {
  if (test.empty()) throw InvalidArgument("evaluate: empty test set");
  if (index.d != model.hyper().d) throw InvalidArgument("evaluate: index and model dimensions differ");
  std::unordered_map<std::string_view, std::size_t> row_of;
  for (std::size_t i = 0; i < index.size(); ++i) row_of.emplace(index.ids[i], i);

  const auto d = static_cast<std::size_t>(model.hyper().d);
  std::vector<QueryOutcome> outcomes;
  outcomes.reserve(test.size());
  std::vector<float> scores;
  double total_ms = 0.0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    const std::size_t end = std::min(test.size(), start + kChunk);
    const auto t0 = Clock::now();
    QueryBatch batch;
    for (std::size_t i = start; i < end; ++i) batch.add_ids(test[i].query_ids);
    auto qv = model.query_vectors(batch);
    total_ms += ms_since(t0);
    for (std::size_t i = start; i < end; ++i) {
      const auto t1 = Clock::now();
      const std::span<float> q(qv.data() + (i - start) * d, d);
      normalize(q);
      QueryOutcome o;
      o.id = test[i].id;
      o.words = std::min(count_words(test[i].query), static_cast<std::size_t>(test.q()));
      auto it = row_of.find(test[i].id);
      if (it != row_of.end()) {
        index.scores(q, scores);
        o.rank = rank_of(scores, index.ids, it->second);
      }
      total_ms += ms_since(t1);
      outcomes.push_back(std::move(o));
    }
  }
  EvalReport r = summarize(std::move(outcomes), ks, index.size(), mrr_k);
  r.ablation = model.ablation().to_string();
  r.mean_query_ms = total_ms / static_cast<double>(test.size());
  return r;
}

EvalReport evaluate_checkpoint(const EncodedCorpus& test, PscsModel& model, std::span<const std::int64_t> ks,
                               std::int64_t mrr_k) {
  if (test.empty()) throw InvalidArgument("evaluate: empty test set");
  const SearchIndex index = build_index(model, test);
  return evaluate_index(test, index, model, ks, mrr_k);
}

// ---------------------------------------------------------------- ablations

AblationTable ablation_campaign(const EncodedCorpus& train_corpus, const EncodedCorpus& test,
                                const TrainConfig& base, std::span<const AblationConfig> variants,
                                std::span<const std::int64_t> ks, const LogFn& log) {
  std::vector<AblationConfig> runs{AblationConfig{}};
  for (const auto& v : variants) {
    v.validate();
    if (!v.is_full() && std::find(runs.begin(), runs.end(), v) == runs.end()) runs.push_back(v);
  }
  AblationTable table;
  for (const auto& v : runs) {
    TrainConfig cfg = base;
    cfg.ablation = v;
    if (!base.out_dir.empty()) cfg.out_dir = base.out_dir + "/" + v.to_string();
    if (log) log("ablation: training " + v.to_string());
    TrainResult trained = train(cfg, train_corpus, log);
    AblationRow row;
    row.variant = v.to_string();
    row.report = evaluate_checkpoint(test, trained.model, ks);
    row.best_epoch = static_cast<std::size_t>(trained.best_epoch);
    row.delta_mrr = table.rows.empty() ? 0.0 : row.report.mrr - table.rows.front().report.mrr;
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string AblationTable::to_text() const {
  std::ostringstream out;
  std::vector<std::int64_t> ks;
  if (!rows.empty()) ks = rows.front().report.ks;
  out << pad("variant", 34, true);
  for (auto k : ks) out << pad("SR@" + std::to_string(k), 9);
  out << pad("MRR", 9) << pad("dMRR", 9) << '\n';
  for (const auto& r : rows) {
    out << pad(r.variant, 34, true);
    for (auto k : ks) out << pad(fixed(r.report.success_rate.at(k)), 9);
    out << pad(fixed(r.report.mrr), 9) << pad((r.delta_mrr >= 0 ? "+" : "") + fixed(r.delta_mrr), 9) << '\n';
  }
  return out.str();
}

std::string AblationTable::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"variant", r.variant},
                 {"best_epoch", r.best_epoch},
                 {"delta_mrr", r.delta_mrr},
                 {"report", nlohmann::json::parse(r.report.to_json(false))}});
  return j.dump(2);
}

// ---------------------------------------------------------------- timing

namespace {

std::pair<double, double> mean_p95(std::vector<double> xs) {
  if (xs.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double x : xs) sum += x;
  std::sort(xs.begin(), xs.end());
  const auto at = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(xs.size()))) - 1;
  return {sum / static_cast<double>(xs.size()), xs[at]};
}

}  // namespace

TimingReport timing_report(const SearchIndex& index, PscsModel& model, const EncodedCorpus& sample,
                           std::size_t trials, std::size_t k) {
  if (sample.empty()) throw InvalidArgument("timing_report: empty sample");
  if (trials == 0) throw InvalidArgument("timing_report: trials must be positive");
  const auto d = static_cast<std::size_t>(model.hyper().d);
  const auto g = static_cast<std::size_t>(model.hyper().g);
  std::vector<double> encode_ms, search_ms;
  std::vector<float> scores;
  volatile float sink = 0.0f;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t i = t % sample.size();
    auto t0 = Clock::now();
    const std::size_t one[] = {i};
    const std::vector<std::vector<std::size_t>> chosen{inference_paths(sample[i], g)};
    auto v = model.code_vectors(make_code_batch(sample, one, chosen));
    normalize(std::span<float>(v.data(), d));
    encode_ms.push_back(ms_since(t0));
    sink = sink + v[0];

    t0 = Clock::now();
    QueryBatch batch;
    batch.add_ids(sample[i].query_ids);
    auto q = model.query_vectors(batch);
    normalize(q);
    index.scores(q, scores);
    const auto hits = top_k(index, scores, k);
    search_ms.push_back(ms_since(t0));
    sink = sink + hits.front().score;
  }
  TimingReport r;
  r.trials = trials;
  r.index_size = index.size();
  std::tie(r.encode_mean_ms, r.encode_p95_ms) = mean_p95(encode_ms);
  std::tie(r.search_mean_ms, r.search_p95_ms) = mean_p95(search_ms);
  return r;
}

std::string TimingReport::to_text() const {
  std::ostringstream out;
  out << pad("stage", 22, true) << pad("mean ms", 10) << pad("p95 ms", 10) << '\n';
  out << pad("encode (per function)", 22, true) << pad(fixed(encode_mean_ms, 3), 10) << pad(fixed(encode_p95_ms, 3), 10)
      << '\n';
  out << pad("search (per query)", 22, true) << pad(fixed(search_mean_ms, 3), 10) << pad(fixed(search_p95_ms, 3), 10)
      << '\n';
  out << trials << " trials, index of " << index_size << " vectors\n";
  return out.str();
}

std::string TimingReport::to_json() const {
  return nlohmann::json{{"trials", trials},
                        {"index_size", index_size},
                        {"encode_mean_ms", encode_mean_ms},
                        {"encode_p95_ms", encode_p95_ms},
                        {"search_mean_ms", search_mean_ms},
                        {"search_p95_ms", search_p95_ms}}
      .dump(2);
}

}  // namespace pscs
