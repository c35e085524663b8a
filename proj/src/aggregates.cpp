#include "metahood/aggregates.hpp"

#include <algorithm>
#include <cassert>

namespace metahood {

bool AggCell::is_zero() const {
    if (count || volume || space_used) return false;
    return std::all_of(hist.begin(), hist.end(), [](std::int64_t v) { return v == 0; });
}

void AggCell::add(const AggCell& other) {
    count += other.count;
    volume += other.volume;
    space_used += other.space_used;
    for (int i = 0; i < kSizeBuckets; i++) hist[i] += other.hist[i];
}

std::string_view to_string(Dim d) {
    switch (d) {
        case Dim::owner: return "owner";
        case Dim::group: return "group";
        case Dim::etype: return "type";
        case Dim::hsm: return "hsm_state";
        case Dim::owner_type: return "owner_type";
    }
    return "owner";
}

namespace {

void cell_apply(AggCell& cell, const EntryRecord& e, int sign) {
    cell.count += sign;
    cell.volume += sign * static_cast<std::int64_t>(e.size);
    cell.space_used += sign * static_cast<std::int64_t>(e.blocks) * 512;
    cell.hist[size_bucket(e.size)] += sign;
    assert(cell.count >= 0 && cell.volume >= 0 && cell.space_used >= 0);
}

void ledger_apply(AggregateLedger& ledger, const EntryRecord& e, int sign) {
    std::string type_name(to_string(e.etype));
    cell_apply(ledger.owner[e.owner], e, sign);
    cell_apply(ledger.group[e.group], e, sign);
    cell_apply(ledger.etype[type_name], e, sign);
    cell_apply(ledger.hsm[std::string(to_string(e.hsm))], e, sign);
    cell_apply(ledger.owner_type[{e.owner, type_name}], e, sign);
    cell_apply(ledger.total, e, sign);
}

template <typename Map>
void prune(Map& m) {
    for (auto it = m.begin(); it != m.end();) {
        if (it->second.is_zero()) it = m.erase(it);
        else ++it;
    }
}

}  // namespace

void AggregateLedger::add(const AggregateLedger& other) {
    for (const auto& [k, v] : other.owner) owner[k].add(v);
    for (const auto& [k, v] : other.group) group[k].add(v);
    for (const auto& [k, v] : other.etype) etype[k].add(v);
    for (const auto& [k, v] : other.hsm) hsm[k].add(v);
    for (const auto& [k, v] : other.owner_type) owner_type[k].add(v);
    total.add(other.total);
}

void AggregateLedger::prune_zero_cells() {
    prune(owner);
    prune(group);
    prune(etype);
    prune(hsm);
    prune(owner_type);
}

void on_delta(AggregateLedger& ledger, const EntryRecord* before, const EntryRecord* after) {
    if (before) ledger_apply(ledger, *before, -1);
    if (after) ledger_apply(ledger, *after, +1);
}

void ActivityCounters::bump(const std::string& rtype, const std::string& owner,
                            const std::string& jobid) {
    by_rtype[rtype]++;
    by_owner[owner.empty() ? "-" : owner][rtype]++;
    by_jobid[jobid.empty() ? "-" : jobid][rtype]++;
}

void ActivityCounters::add(const ActivityCounters& other) {
    for (const auto& [k, v] : other.by_rtype) by_rtype[k] += v;
    for (const auto& [o, m] : other.by_owner)
        for (const auto& [k, v] : m) by_owner[o][k] += v;
    for (const auto& [j, m] : other.by_jobid)
        for (const auto& [k, v] : m) by_jobid[j][k] += v;
}

RollupCell rollup_contribution(const EntryRecord& e) {
    RollupCell c;
    c.count = 1;
    if (e.etype != EntryType::dir) {
        c.volume = static_cast<std::int64_t>(e.size);
        c.space = static_cast<std::int64_t>(e.blocks) * 512;
    }
    return c;
}

KeyReport report_key(const AggregateLedger& ledger, Dim dim, const std::string& key,
                     const std::string& second) {
    const AggCell* cell = nullptr;
    switch (dim) {
        case Dim::owner: {
            auto it = ledger.owner.find(key);
            cell = it == ledger.owner.end() ? nullptr : &it->second;
            break;
        }
        case Dim::group: {
            auto it = ledger.group.find(key);
            cell = it == ledger.group.end() ? nullptr : &it->second;
            break;
        }
        case Dim::etype: {
            auto it = ledger.etype.find(key);
            cell = it == ledger.etype.end() ? nullptr : &it->second;
            break;
        }
        case Dim::hsm: {
            auto it = ledger.hsm.find(key);
            cell = it == ledger.hsm.end() ? nullptr : &it->second;
            break;
        }
        case Dim::owner_type: {
            auto it = ledger.owner_type.find({key, second});
            cell = it == ledger.owner_type.end() ? nullptr : &it->second;
            break;
        }
    }
    KeyReport r;
    if (!cell || cell->count == 0) return r;
    r.count = cell->count;
    r.space_used = cell->space_used;
    r.avg_size = cell->volume / cell->count;
    return r;
}

std::vector<TopRow> top_owners(const AggregateLedger& ledger, TopMetric metric, std::size_t n,
                               int bucket_lo, int bucket_hi) {
    std::vector<TopRow> rows;
    for (const auto& [name, cell] : ledger.owner) {
        if (cell.count == 0) continue;
        TopRow row;
        row.owner = name;
        row.count = cell.count;
        row.volume = cell.volume;
        switch (metric) {
            case TopMetric::count: row.metric = static_cast<double>(cell.count); break;
            case TopMetric::volume: row.metric = static_cast<double>(cell.volume); break;
            case TopMetric::avg_size:
                row.metric = static_cast<double>(cell.volume) / static_cast<double>(cell.count);
                break;
            case TopMetric::bucket_share: {
                std::int64_t in_range = 0;
                for (int b = bucket_lo; b <= bucket_hi && b < kSizeBuckets; b++)
                    if (b >= 0) in_range += cell.hist[b];
                row.metric = static_cast<double>(in_range) / static_cast<double>(cell.count);
                break;
            }
        }
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const TopRow& a, const TopRow& b) {
        if (a.metric != b.metric) return a.metric > b.metric;
        return a.owner < b.owner;
    });
    if (rows.size() > n) rows.resize(n);
    return rows;
}

}  // namespace metahood
