// On-the-fly summary statistics: per-dimension counts/volumes/size histograms,
// changelog activity counters, and the entry-level delta arithmetic that keeps
// them coherent inside store transactions.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metahood/core.hpp"

namespace metahood {

struct AggCell {
    std::int64_t count = 0;
    std::int64_t volume = 0;      // logical bytes
    std::int64_t space_used = 0;  // blocks * 512
    std::array<std::int64_t, kSizeBuckets> hist{};

    bool is_zero() const;
    void add(const AggCell& other);

    friend bool operator==(const AggCell&, const AggCell&) = default;
};

enum class Dim { owner, group, etype, hsm, owner_type };

std::string_view to_string(Dim d);

// Every cell equals the fold of the statistic over live entries; `total` is
// the all-entries cell backing the global size profile.
struct AggregateLedger {
    std::map<std::string, AggCell> owner;
    std::map<std::string, AggCell> group;
    std::map<std::string, AggCell> etype;  // keyed by type name
    std::map<std::string, AggCell> hsm;    // keyed by state name
    std::map<std::pair<std::string, std::string>, AggCell> owner_type;
    AggCell total;

    void add(const AggregateLedger& other);
    void prune_zero_cells();

    friend bool operator==(const AggregateLedger&, const AggregateLedger&) = default;
};

// (none, after) = insert, (before, none) = delete, (before, after) = update.
// Subtracts before's contributions and adds after's across all dimensions.
void on_delta(AggregateLedger& ledger, const EntryRecord* before, const EntryRecord* after);

// Changelog activity counters; "-" buckets records without an owner or jobid
// so per-dimension sums always equal the applied-record totals.
struct ActivityCounters {
    std::map<std::string, std::uint64_t> by_rtype;
    std::map<std::string, std::map<std::string, std::uint64_t>> by_owner;
    std::map<std::string, std::map<std::string, std::uint64_t>> by_jobid;

    void bump(const std::string& rtype, const std::string& owner, const std::string& jobid);
    void add(const ActivityCounters& other);

    friend bool operator==(const ActivityCounters&, const ActivityCounters&) = default;
};

// Subtree usage rollup for one directory.
struct RollupCell {
    std::int64_t count = 0;   // entries in the subtree (all types)
    std::int64_t volume = 0;  // logical bytes of non-directories
    std::int64_t space = 0;   // blocks * 512 of non-directories

    friend bool operator==(const RollupCell&, const RollupCell&) = default;
};

// Contribution of one entry to its ancestors' rollups.
RollupCell rollup_contribution(const EntryRecord& e);

struct KeyReport {
    std::int64_t count = 0;
    std::int64_t space_used = 0;
    std::int64_t avg_size = 0;  // volume / count, 0 when count == 0

    std::string avg_size_text() const { return format_size_human(static_cast<std::uint64_t>(avg_size)); }
    std::string space_used_text() const { return format_size_human(static_cast<std::uint64_t>(space_used)); }
};

// Constant-time lookup; unknown keys give a zero row.
KeyReport report_key(const AggregateLedger& ledger, Dim dim, const std::string& key,
                     const std::string& second = "");

enum class TopMetric { count, volume, avg_size, bucket_share };

struct TopRow {
    std::string owner;
    double metric = 0;
    std::int64_t count = 0;
    std::int64_t volume = 0;
};

// Owners ranked by metric descending, deterministic ties by owner name.
// bucket_share ranks by (entries in buckets [lo..hi]) / (owner's entries).
std::vector<TopRow> top_owners(const AggregateLedger& ledger, TopMetric metric, std::size_t n,
                               int bucket_lo = 0, int bucket_hi = kSizeBuckets - 1);

}  // namespace metahood
