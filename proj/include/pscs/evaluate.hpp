#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pscs/engine.hpp"

namespace pscs {

// 1-based rank of the paired snippet; nullopt when it was not retrieved.
using Rank = std::optional<std::int64_t>;

// Fraction of queries with rank <= k. k = 0 gives 0.
double success_rate_at_k(std::span<const Rank> ranks, std::int64_t k);
// Mean of 1/rank over ranks <= k; everything else contributes 0.
double mrr(std::span<const Rank> ranks, std::int64_t k);

// Expected metrics of a model that ranks uniformly at random over n items.
double random_success_rate(std::int64_t k, std::int64_t n);
double random_mrr(std::int64_t k, std::int64_t n);

// Rank of row `truth` under (score desc, id asc).
std::int64_t rank_of(std::span<const float> scores, std::span<const std::string> ids, std::size_t truth);

struct QueryOutcome {
  std::string id;
  std::size_t words = 0;
  Rank rank;
};

struct LengthBucket {
  std::size_t lo = 0, hi = 0;  // inclusive word counts
  std::size_t queries = 0;
  double success_at_10 = 0.0;
  double mrr = 0.0;
  bool low_confidence = false;  // fewer than 10 queries
};

struct EvalReport {
  std::string ablation = "full";
  std::size_t pool = 0;
  std::vector<std::int64_t> ks;
  std::map<std::int64_t, double> success_rate;
  std::int64_t mrr_k = 10;
  double mrr = 0.0;
  double mean_query_ms = 0.0;
  std::vector<QueryOutcome> per_query;
  std::vector<LengthBucket> breakdown;
  std::vector<std::string> violations;  // failed invariant checks

  bool ok() const { return violations.empty(); }
  // Timing is a measurement, so reports compared for equality leave it out.
  std::string to_json(bool include_per_query = true, bool include_timing = true) const;
  std::string to_text() const;
};

inline const std::vector<std::pair<std::size_t, std::size_t>> kDefaultBuckets = {{1, 4}, {5, 9}, {10, 14}, {15, 20}};

// Aggregates outcomes into a report and runs its invariant checks.
EvalReport summarize(std::vector<QueryOutcome> outcomes, std::span<const std::int64_t> ks, std::size_t pool,
                     std::int64_t mrr_k = 10);
void check_invariants(EvalReport& report);

std::vector<LengthBucket> length_breakdown(const EvalReport& report,
                                           std::span<const std::pair<std::size_t, std::size_t>> buckets);

// Pool = every test snippet; each test query is ranked against it.
EvalReport evaluate_checkpoint(const EncodedCorpus& test, PscsModel& model, std::span<const std::int64_t> ks,
                               std::int64_t mrr_k = 10);

// Same, against a prebuilt index whose rows are the test snippets by id.
EvalReport evaluate_index(const EncodedCorpus& test, const SearchIndex& index, PscsModel& model,
                          std::span<const std::int64_t> ks, std::int64_t mrr_k = 10);

struct AblationRow {
  std::string variant;
  EvalReport report;
  double delta_mrr = 0.0;  // variant - full
  std::size_t best_epoch = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::string to_text() const;
  std::string to_json() const;
};

// Trains every variant with the base config and seed, evaluates each on the
// same test pool. The full model is always trained first as the reference.
AblationTable ablation_campaign(const EncodedCorpus& train_corpus, const EncodedCorpus& test,
                                const TrainConfig& base, std::span<const AblationConfig> variants,
                                std::span<const std::int64_t> ks, const LogFn& log = {});

struct TimingReport {
  std::size_t trials = 0;
  double encode_mean_ms = 0.0, encode_p95_ms = 0.0;
  double search_mean_ms = 0.0, search_p95_ms = 0.0;
  std::size_t index_size = 0;
  std::string to_text() const;
  std::string to_json() const;
};

// Encodes snippets of `sample` one at a time and runs top-k searches with
// their queries, cycling through the sample until `trials` of each are done.
TimingReport timing_report(const SearchIndex& index, PscsModel& model, const EncodedCorpus& sample,
                           std::size_t trials = 1000, std::size_t k = 10);

}  // namespace pscs
