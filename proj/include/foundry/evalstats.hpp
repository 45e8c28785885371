#pragma once

// Policy evaluation statistics over binary rollout outcomes.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "foundry/error.hpp"

namespace foundry::evalstats {

// Microseconds since 1970-01-01T00:00:00Z.
using Instant = std::int64_t;

// Accepts "YYYY-MM-DDTHH:MM:SS[.frac](Z|+hh:mm|-hh:mm)"; fractions beyond
// microseconds are truncated.
Instant parse_rfc3339(std::string_view text);
// UTC with a 'Z' suffix; six fractional digits only when nonzero.
std::string format_rfc3339(Instant t);

struct RolloutRecord {
    std::string policy;
    std::string task;
    std::int64_t seed = 0;
    bool success = false;
    Instant timestamp = 0;
    std::optional<std::string> video_uri;

    friend bool operator==(const RolloutRecord&, const RolloutRecord&) = default;
};

struct FieldIssue {
    std::string field;
    std::string message;
};

class RecordError : public Error {
public:
    explicit RecordError(std::vector<FieldIssue> issues);
    const std::vector<FieldIssue>& issues() const { return issues_; }

private:
    std::vector<FieldIssue> issues_;
};

nlohmann::json to_json(const RolloutRecord& r);
// Collects every problem before throwing RecordError.
RolloutRecord record_from_json(const nlohmann::json& j);

std::string write_records_jsonl(std::span<const RolloutRecord> records);
std::vector<RolloutRecord> read_records_jsonl(std::string_view text);

// One record per (policy, task, seed): the latest timestamp wins, ties go to
// the later record. Survivors keep their first-seen order.
std::vector<RolloutRecord> dedup_latest(std::span<const RolloutRecord> records);

struct Counts {
    std::uint64_t successes = 0;
    std::uint64_t trials = 0;
    double rate() const { return trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0; }
    friend bool operator==(const Counts&, const Counts&) = default;
};

Counts count(std::span<const RolloutRecord> records);

struct Balanced {
    bool sufficient = false;
    std::string reason;  // set when !sufficient
    std::uint64_t n_min = 0;
    std::map<std::string, Counts> per_task;
    Counts aggregate;
};

// Truncates every task to the n_min most recent rollouts of one policy.
// Recency is timestamp order, ties by position in the input list.
Balanced balanced_counts(const std::map<std::string, std::vector<RolloutRecord>>& per_task);

class Posterior {
public:
    Posterior(std::uint64_t successes, std::uint64_t trials, double prior_a = 1.0, double prior_b = 1.0);

    double alpha() const { return alpha_; }
    double beta() const { return beta_; }
    std::uint64_t successes() const { return successes_; }
    std::uint64_t trials() const { return trials_; }

    double mean() const;
    double quantile(double q) const;
    double pdf(double x) const;
    double cdf(double x) const;
    // n evenly spaced (x, density) pairs spanning the 0.1%..99.9% quantiles.
    std::vector<std::pair<double, double>> density_points(std::size_t n = 64) const;

private:
    std::uint64_t successes_;
    std::uint64_t trials_;
    double alpha_;
    double beta_;
};

Posterior posterior(std::uint64_t successes, std::uint64_t trials, double prior_a = 1.0, double prior_b = 1.0);

// Decides whether two policies differ. Swap in another test by subclassing.
class Comparator {
public:
    virtual ~Comparator() = default;
    virtual std::string name() const = 0;
    // P(p_a > p_b | data)
    virtual double prob_greater(const Posterior& a, const Posterior& b) const = 0;
    // alpha_pair is the per-comparison level.
    virtual bool significant(const Posterior& a, const Posterior& b, double alpha_pair) const;
};

// Independent Beta posteriors; significant when min(P, 1 - P) < alpha_pair / 2.
// P is integrated with adaptive Gauss-Kronrod quadrature.
class BetaSuperiority : public Comparator {
public:
    std::string name() const override { return "beta_superiority_bonferroni"; }
    double prob_greater(const Posterior& a, const Posterior& b) const override;
};

const Comparator& default_comparator();

struct SignificanceMatrix {
    std::vector<std::string> policies;
    std::vector<std::vector<bool>> significant;
    std::vector<std::vector<double>> prob_greater;  // [i][j] = P(p_i > p_j)
    double alpha_fwer = 0.05;

    std::size_t size() const { return policies.size(); }
};

// Bonferroni over C(n, 2) pairs. Policies are taken in map (name) order.
SignificanceMatrix pairwise_compare(const std::map<std::string, Counts>& results, double alpha_fwer = 0.05,
                                    const Comparator& comparator = default_comparator());

// Policies sharing no letter differ significantly.
struct CLDAssignment {
    std::map<std::string, std::vector<std::string>> letters;
};

// "a".."z", then "aa", "ab", ...
std::string letter_label(std::size_t index);

CLDAssignment compute_cld(const SignificanceMatrix& m);

struct PolicyView {
    Counts counts;
    Posterior post{0, 0};
};

struct ComparisonView {
    std::map<std::string, PolicyView> policies;
    std::optional<SignificanceMatrix> significance;  // absent with fewer than 2 comparable policies
    CLDAssignment cld;
};

struct CampaignSummary {
    std::vector<std::string> policies;
    std::vector<std::string> tasks;
    std::map<std::string, ComparisonView> per_task;
    std::map<std::string, Balanced> balanced;  // by policy
    ComparisonView aggregate;
    double alpha_fwer = 0.05;
};

// Records outside `policies` x `tasks` are ignored; duplicates are removed
// first. Policies without data sit out the comparisons.
CampaignSummary campaign_summary(std::span<const RolloutRecord> records, const std::vector<std::string>& tasks,
                                 const std::vector<std::string>& policies, double alpha_fwer = 0.05,
                                 const Comparator& comparator = default_comparator());

nlohmann::json to_json(const Posterior& p);
nlohmann::json to_json(const SignificanceMatrix& m);
nlohmann::json to_json(const ComparisonView& v);
nlohmann::json to_json(const CampaignSummary& s);

}  // namespace foundry::evalstats
