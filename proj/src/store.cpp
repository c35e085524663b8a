#include "metahood/store.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cassert>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace metahood {

// ---------------------------------------------------------------------------
// Line formats

namespace {

std::uint64_t to_u64(const std::string& s) { return std::stoull(s); }
std::int64_t to_i64(const std::string& s) { return std::stoll(s); }

}  // namespace

std::string format_softrm_line(const SoftRmRecord& r) {
    return "R " + format_entry_id(r.id) + " " + encode_name(r.last_known_path) + " " +
           std::to_string(r.size) + " " + r.owner + " " + std::to_string(r.rm_time) + " " +
           (r.archived ? "1" : "0");
}

SoftRmRecord parse_softrm_line(const std::string& line) {
    auto f = split_ws(line);
    if (f.size() != 7) throw ParseError("bad softrm line: " + line);
    SoftRmRecord r;
    r.id = parse_entry_id(f[1]);
    r.last_known_path = decode_name(f[2]);
    r.size = to_u64(f[3]);
    r.owner = f[4];
    r.rm_time = to_i64(f[5]);
    r.archived = f[6] == "1";
    return r;
}

// ---------------------------------------------------------------------------
// Plain store state and transaction

struct Store::State {
    std::map<EntryId, EntryRecord> entries;
    std::map<EntryId, SoftRmRecord> softrm;
    std::map<EntryId, std::map<std::string, EntryId>> children;
    AggregateLedger ledger;
    ActivityCounters activity;
    std::map<EntryId, RollupCell> rollups;
    std::map<std::string, std::uint64_t> meta;
};

namespace {

class PlainTxn : public StoreTxn {
public:
    PlainTxn(Store::State& s, std::atomic<std::uint64_t>& reads) : s_(s), reads_(reads) {}

    std::optional<EntryRecord> entry_get(const EntryId& id) override {
        reads_++;
        auto it = s_.entries.find(id);
        if (it == s_.entries.end()) return std::nullopt;
        return it->second;
    }

    void entry_put(const EntryRecord& rec) override {
        save_entry(rec.id);
        s_.entries[rec.id] = rec;
    }

    void entry_del(const EntryId& id) override {
        save_entry(id);
        s_.entries.erase(id);
    }

    std::optional<SoftRmRecord> softrm_get(const EntryId& id) override {
        auto it = s_.softrm.find(id);
        if (it == s_.softrm.end()) return std::nullopt;
        return it->second;
    }

    void softrm_put(const SoftRmRecord& rec) override {
        save_softrm(rec.id);
        s_.softrm[rec.id] = rec;
    }

    void softrm_del(const EntryId& id) override {
        save_softrm(id);
        s_.softrm.erase(id);
    }

    std::map<std::string, EntryId> children_of(const EntryId& parent) override {
        auto it = s_.children.find(parent);
        if (it == s_.children.end()) return {};
        return it->second;
    }

    std::optional<EntryId> child_get(const EntryId& parent, const std::string& name) override {
        auto it = s_.children.find(parent);
        if (it == s_.children.end()) return std::nullopt;
        auto jt = it->second.find(name);
        if (jt == it->second.end()) return std::nullopt;
        return jt->second;
    }

    void child_link(const EntryId& parent, const std::string& name, const EntryId& id) override {
        save_child(parent, name);
        s_.children[parent][name] = id;
    }

    void child_unlink(const EntryId& parent, const std::string& name) override {
        save_child(parent, name);
        auto it = s_.children.find(parent);
        if (it == s_.children.end()) return;
        it->second.erase(name);
        if (it->second.empty()) s_.children.erase(it);
    }

    void ledger_entry_delta(const EntryRecord* before, const EntryRecord* after) override {
        save_ledger();
        on_delta(s_.ledger, before, after);
    }

    void ledger_cell_add(Dim dim, const std::string& key, const std::string& second,
                         const AggCell& delta) override {
        save_ledger();
        AggCell* cell = nullptr;
        switch (dim) {
            case Dim::owner: cell = &s_.ledger.owner[key]; break;
            case Dim::group: cell = &s_.ledger.group[key]; break;
            case Dim::etype: cell = &s_.ledger.etype[key]; break;
            case Dim::hsm: cell = &s_.ledger.hsm[key]; break;
            case Dim::owner_type: cell = &s_.ledger.owner_type[{key, second}]; break;
        }
        cell->add(delta);
    }

    void activity_bump(const std::string& rtype, const std::string& owner,
                       const std::string& jobid) override {
        save_activity();
        s_.activity.bump(rtype, owner, jobid);
    }

    void rollup_adjust(const EntryId& dir, const RollupCell& delta) override {
        save_rollup(dir);
        auto& cell = s_.rollups[dir];
        cell.count += delta.count;
        cell.volume += delta.volume;
        cell.space += delta.space;
        assert(cell.count >= 0 && cell.volume >= 0 && cell.space >= 0);
    }

    void rollup_put(const EntryId& dir, const RollupCell& cell) override {
        save_rollup(dir);
        s_.rollups[dir] = cell;
    }

    void rollup_del(const EntryId& dir) override {
        save_rollup(dir);
        s_.rollups.erase(dir);
    }

    void rollup_clear() override {
        if (!rollups_saved_) {
            saved_rollup_map_ = s_.rollups;
            rollups_saved_ = true;
        }
        s_.rollups.clear();
    }

    std::optional<RollupCell> rollup_get(const EntryId& dir) override {
        auto it = s_.rollups.find(dir);
        if (it == s_.rollups.end()) return std::nullopt;
        return it->second;
    }

    void for_each_rollup(
        const std::function<void(const EntryId&, const RollupCell&)>& fn) override {
        for (const auto& [id, cell] : s_.rollups) fn(id, cell);
    }

    std::uint64_t meta_get(const std::string& key) override {
        auto it = s_.meta.find(key);
        return it == s_.meta.end() ? 0 : it->second;
    }

    void meta_set(const std::string& key, std::uint64_t value) override {
        save_meta(key);
        s_.meta[key] = value;
    }

    void meta_del_prefix(const std::string& prefix) override {
        auto it = s_.meta.lower_bound(prefix);
        while (it != s_.meta.end() && it->first.rfind(prefix, 0) == 0) {
            save_meta(it->first);
            it = s_.meta.erase(it);
        }
    }

    void for_each_entry(const std::function<void(const EntryRecord&)>& fn) override {
        for (const auto& [id, rec] : s_.entries) {
            reads_++;
            fn(rec);
        }
    }

    void for_each_softrm(const std::function<void(const SoftRmRecord&)>& fn) override {
        for (const auto& [id, rec] : s_.softrm) fn(rec);
    }

    void rollback() {
        for (auto& [key, old] : saved_entries_) {
            if (old) s_.entries[key] = *old;
            else s_.entries.erase(key);
        }
        for (auto& [key, old] : saved_softrm_) {
            if (old) s_.softrm[key] = *old;
            else s_.softrm.erase(key);
        }
        for (auto& [key, old] : saved_children_) {
            if (old) s_.children[key.first][key.second] = *old;
            else {
                auto it = s_.children.find(key.first);
                if (it != s_.children.end()) {
                    it->second.erase(key.second);
                    if (it->second.empty()) s_.children.erase(it);
                }
            }
        }
        if (ledger_saved_) s_.ledger = std::move(saved_ledger_);
        if (activity_saved_) s_.activity = std::move(saved_activity_);
        if (rollups_saved_) {
            s_.rollups = std::move(saved_rollup_map_);
        } else {
            for (auto& [key, old] : saved_rollups_) {
                if (old) s_.rollups[key] = *old;
                else s_.rollups.erase(key);
            }
        }
        for (auto& [key, old] : saved_meta_) {
            if (old) s_.meta[key] = *old;
            else s_.meta.erase(key);
        }
    }

private:
    void save_entry(const EntryId& id) {
        if (saved_entries_.count(id)) return;
        auto it = s_.entries.find(id);
        saved_entries_[id] = it == s_.entries.end() ? std::nullopt
                                                    : std::optional<EntryRecord>(it->second);
    }

    void save_softrm(const EntryId& id) {
        if (saved_softrm_.count(id)) return;
        auto it = s_.softrm.find(id);
        saved_softrm_[id] = it == s_.softrm.end() ? std::nullopt
                                                  : std::optional<SoftRmRecord>(it->second);
    }

    void save_child(const EntryId& parent, const std::string& name) {
        auto key = std::make_pair(parent, name);
        if (saved_children_.count(key)) return;
        std::optional<EntryId> old;
        auto it = s_.children.find(parent);
        if (it != s_.children.end()) {
            auto jt = it->second.find(name);
            if (jt != it->second.end()) old = jt->second;
        }
        saved_children_[key] = old;
    }

    void save_ledger() {
        if (ledger_saved_) return;
        saved_ledger_ = s_.ledger;
        ledger_saved_ = true;
    }

    void save_activity() {
        if (activity_saved_) return;
        saved_activity_ = s_.activity;
        activity_saved_ = true;
    }

    void save_rollup(const EntryId& dir) {
        if (rollups_saved_ || saved_rollups_.count(dir)) return;
        auto it = s_.rollups.find(dir);
        saved_rollups_[dir] = it == s_.rollups.end() ? std::nullopt
                                                     : std::optional<RollupCell>(it->second);
    }

    void save_meta(const std::string& key) {
        if (saved_meta_.count(key)) return;
        auto it = s_.meta.find(key);
        saved_meta_[key] = it == s_.meta.end() ? std::nullopt
                                               : std::optional<std::uint64_t>(it->second);
    }

    Store::State& s_;
    std::atomic<std::uint64_t>& reads_;
    std::map<EntryId, std::optional<EntryRecord>> saved_entries_;
    std::map<EntryId, std::optional<SoftRmRecord>> saved_softrm_;
    std::map<std::pair<EntryId, std::string>, std::optional<EntryId>> saved_children_;
    std::map<EntryId, std::optional<RollupCell>> saved_rollups_;
    std::map<std::string, std::optional<std::uint64_t>> saved_meta_;
    AggregateLedger saved_ledger_;
    ActivityCounters saved_activity_;
    std::map<EntryId, RollupCell> saved_rollup_map_;
    bool ledger_saved_ = false;
    bool activity_saved_ = false;
    bool rollups_saved_ = false;
};

}  // namespace

Store::Store(std::uint64_t rollup_depth)
    : state_(std::make_unique<State>()), rollup_depth_(rollup_depth) {}

Store::~Store() = default;

bool Store::txn(const std::function<void(StoreTxn&)>& body) {
    std::lock_guard<std::mutex> lock(mu_);
    PlainTxn t(*state_, entry_reads_);
    try {
        body(t);
    } catch (const TxnAbort&) {
        t.rollback();
        txns_aborted_++;
        return false;
    } catch (...) {
        t.rollback();
        txns_aborted_++;
        throw;
    }
    txns_committed_++;
    return true;
}

AggregateLedger Store::ledger_snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return state_->ledger;
}

ActivityCounters Store::activity_snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return state_->activity;
}

std::optional<RollupCell> Store::rollup(const EntryId& dir) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = state_->rollups.find(dir);
    if (it == state_->rollups.end()) return std::nullopt;
    return it->second;
}

StoreStats Store::stats() const {
    StoreStats s;
    s.entry_reads = entry_reads_.load();
    s.txns_committed = txns_committed_.load();
    s.txns_aborted = txns_aborted_.load();
    return s;
}

// ---------------------------------------------------------------------------
// MirrorStore conveniences

std::optional<EntryRecord> MirrorStore::get(const EntryId& id) {
    std::optional<EntryRecord> out;
    txn([&](StoreTxn& t) { out = t.entry_get(id); });
    return out;
}

std::optional<SoftRmRecord> MirrorStore::get_softrm(const EntryId& id) {
    std::optional<SoftRmRecord> out;
    txn([&](StoreTxn& t) { out = t.softrm_get(id); });
    return out;
}

std::map<std::string, EntryId> MirrorStore::children(const EntryId& parent) {
    std::map<std::string, EntryId> out;
    txn([&](StoreTxn& t) { out = t.children_of(parent); });
    return out;
}

std::uint64_t MirrorStore::meta(const std::string& key) {
    std::uint64_t out = 0;
    txn([&](StoreTxn& t) { out = t.meta_get(key); });
    return out;
}

void MirrorStore::for_each_entry(const std::function<void(const EntryRecord&)>& fn) {
    txn([&](StoreTxn& t) { t.for_each_entry(fn); });
}

void MirrorStore::for_each_softrm(const std::function<void(const SoftRmRecord&)>& fn) {
    txn([&](StoreTxn& t) { t.for_each_softrm(fn); });
}

std::string MirrorStore::path_of(const EntryId& id) {
    std::string out;
    txn([&](StoreTxn& t) {
        out = resolve_path([&](const EntryId& i) { return t.entry_get(i); }, id);
    });
    return out;
}

std::vector<EntryRecord> MirrorStore::query(const QuerySpec& q) {
    std::vector<std::pair<EntryRecord, std::string>> matched;  // record + path
    txn([&](StoreTxn& t) {
        std::map<EntryId, std::string> path_cache;
        std::function<std::string(const EntryId&)> path_for = [&](const EntryId& id) -> std::string {
            auto it = path_cache.find(id);
            if (it != path_cache.end()) return it->second;
            std::string p;
            try {
                p = resolve_path([&](const EntryId& i) { return t.entry_get(i); }, id);
            } catch (const PathError& err) {
                p = err.suffix();
            }
            path_cache[id] = p;
            return p;
        };
        t.for_each_entry([&](const EntryRecord& e) {
            std::string path = path_for(e.id);
            if (!q.filter || evaluate(*q.filter, e, q.now, path)) matched.emplace_back(e, path);
        });
    });

    auto key_less = [&](const std::pair<EntryRecord, std::string>& a,
                        const std::pair<EntryRecord, std::string>& b) {
        int cmp = 0;
        auto spaceship = [&](auto x, auto y) { return x < y ? -1 : (x > y ? 1 : 0); };
        switch (q.sort) {
            case SortKey::size: cmp = spaceship(a.first.size, b.first.size); break;
            case SortKey::atime: cmp = spaceship(a.first.atime, b.first.atime); break;
            case SortKey::mtime: cmp = spaceship(a.first.mtime, b.first.mtime); break;
            case SortKey::name: cmp = spaceship(a.first.name, b.first.name); break;
            case SortKey::path: cmp = spaceship(a.second, b.second); break;
        }
        if (q.descending) cmp = -cmp;
        if (cmp != 0) return cmp < 0;
        return a.first.id < b.first.id;  // ties always id-ascending
    };
    std::sort(matched.begin(), matched.end(), key_less);

    std::vector<EntryRecord> out;
    for (std::size_t i = q.offset; i < matched.size() && out.size() < q.limit; i++)
        out.push_back(std::move(matched[i].first));
    return out;
}

std::string MirrorStore::dump_snapshot(DumpSections sections) {
    std::vector<std::string> elines, rlines;
    txn([&](StoreTxn& t) {
        t.for_each_entry([&](const EntryRecord& e) {
            elines.push_back(format_entry_line(e, /*extended=*/false));
        });
        t.for_each_softrm([&](const SoftRmRecord& r) { rlines.push_back(format_softrm_line(r)); });
    });
    std::sort(elines.begin(), elines.end());
    std::sort(rlines.begin(), rlines.end());
    std::string out = "# metahood snapshot\n# entries\n";
    for (const auto& l : elines) out += l + "\n";
    if (sections == DumpSections::all) {
        out += "# softrm\n";
        for (const auto& l : rlines) out += l + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// MirrorTxn bookkeeping

std::uint64_t MirrorTxn::dir_depth(const EntryId& id) {
    std::uint64_t depth = 0;
    EntryId cur = id;
    for (int hops = 0; hops < 4096; hops++) {
        auto rec = t_.entry_get(cur);
        if (!rec || rec->is_root()) return depth;
        depth++;
        cur = rec->parent;
    }
    return depth;
}

std::vector<EntryId> MirrorTxn::ancestor_dirs(const EntryId& parent) {
    std::vector<EntryId> chain;
    EntryId cur = parent;
    for (int hops = 0; hops < 4096; hops++) {
        auto rec = t_.entry_get(cur);
        if (!rec) break;
        chain.push_back(cur);
        if (rec->is_root()) break;
        cur = rec->parent;
    }
    return chain;
}

void MirrorTxn::rollup_insert_entry(const EntryRecord& rec) {
    if (depth_ == 0) return;
    if (rec.etype == EntryType::dir && !rec.is_root()) {
        if (dir_depth(rec.id) <= depth_) t_.rollup_put(rec.id, t_.rollup_get(rec.id).value_or(RollupCell{}));
    }
    if (rec.is_root()) {
        t_.rollup_put(rec.id, t_.rollup_get(rec.id).value_or(RollupCell{}));
        return;
    }
    RollupCell c = rollup_contribution(rec);
    for (const EntryId& a : ancestor_dirs(rec.parent))
        if (t_.rollup_get(a)) t_.rollup_adjust(a, c);
}

void MirrorTxn::rollup_remove_entry(const EntryRecord& rec) {
    if (depth_ == 0) return;
    if (rec.etype == EntryType::dir) t_.rollup_del(rec.id);
    if (rec.is_root()) return;
    RollupCell c = rollup_contribution(rec);
    c.count = -c.count;
    c.volume = -c.volume;
    c.space = -c.space;
    for (const EntryId& a : ancestor_dirs(rec.parent))
        if (t_.rollup_get(a)) t_.rollup_adjust(a, c);
}

void MirrorTxn::rebuild_rollups() { rebuild_rollup_table(t_, depth_); }

void rebuild_rollup_table(StoreTxn& t, std::uint64_t rollup_depth) {
    t.rollup_clear();
    if (rollup_depth == 0) return;
    std::vector<EntryRecord> entries;
    t.for_each_entry([&](const EntryRecord& e) { entries.push_back(e); });

    // depth of every dir by walking parents (mirror is small enough)
    std::map<EntryId, EntryId> parent_of;
    for (const auto& e : entries) parent_of[e.id] = e.parent;
    auto depth_of = [&](EntryId id) -> std::uint64_t {
        std::uint64_t d = 0;
        for (int hops = 0; hops < 4096; hops++) {
            auto it = parent_of.find(id);
            if (it == parent_of.end() || it->second.is_null()) return d;
            id = it->second;
            d++;
        }
        return d;
    };

    for (const auto& e : entries)
        if (e.etype == EntryType::dir && depth_of(e.id) <= rollup_depth)
            t.rollup_put(e.id, RollupCell{});

    for (const auto& e : entries) {
        if (e.is_root()) continue;
        RollupCell c = rollup_contribution(e);
        EntryId cur = e.parent;
        for (int hops = 0; hops < 4096; hops++) {
            if (t.rollup_get(cur)) t.rollup_adjust(cur, c);
            auto it = parent_of.find(cur);
            if (it == parent_of.end() || it->second.is_null()) break;
            cur = it->second;
        }
    }
}

void MirrorTxn::upsert(const EntryRecord& rec) {
    auto before = t_.entry_get(rec.id);
    t_.entry_put(rec);

    if (!rec.is_root()) {
        bool edge_changed = !before || before->parent != rec.parent || before->name != rec.name;
        if (before && edge_changed && !before->is_root())
            t_.child_unlink(before->parent, before->name);
        if (edge_changed) t_.child_link(rec.parent, rec.name, rec.id);
    }

    int tag_delta = (rec.dirty_mask != 0 ? 1 : 0) - (before && before->dirty_mask != 0 ? 1 : 0);
    if (tag_delta != 0)
        t_.meta_set(kMetaPendingTags, t_.meta_get(kMetaPendingTags) + tag_delta);

    t_.ledger_entry_delta(before ? &*before : nullptr, &rec);

    if (depth_ != 0) {
        if (!before) {
            rollup_insert_entry(rec);
        } else if (before->parent != rec.parent || before->etype != rec.etype) {
            if (rec.etype == EntryType::dir || before->etype == EntryType::dir) {
                rebuild_rollups();  // subtree moved; recompute wholesale
            } else {
                rollup_remove_entry(*before);
                rollup_insert_entry(rec);
            }
        } else {
            RollupCell b = rollup_contribution(*before);
            RollupCell a = rollup_contribution(rec);
            RollupCell d{a.count - b.count, a.volume - b.volume, a.space - b.space};
            if (d.count || d.volume || d.space) {
                for (const EntryId& anc : ancestor_dirs(rec.parent))
                    if (t_.rollup_get(anc)) t_.rollup_adjust(anc, d);
            }
        }
    }
}

std::string MirrorTxn::path_of(const EntryId& id) {
    try {
        return resolve_path([&](const EntryId& i) { return t_.entry_get(i); }, id);
    } catch (const PathError& err) {
        return err.suffix();
    }
}

MirrorTxn::RemoveResult MirrorTxn::remove(const EntryId& id, bool to_softrm, std::int64_t rm_time) {
    auto before = t_.entry_get(id);
    if (!before) return RemoveResult::absent;

    if (to_softrm && before->etype == EntryType::file) {
        SoftRmRecord r;
        r.id = id;
        r.last_known_path = path_of(id);
        r.size = before->size;
        r.owner = before->owner;
        r.rm_time = rm_time;
        r.archived = before->hsm == HsmState::archived || before->hsm == HsmState::released;
        t_.softrm_put(r);
    }

    if (!before->is_root()) t_.child_unlink(before->parent, before->name);
    if (before->dirty_mask != 0)
        t_.meta_set(kMetaPendingTags, t_.meta_get(kMetaPendingTags) - 1);
    t_.ledger_entry_delta(&*before, nullptr);
    rollup_remove_entry(*before);
    t_.entry_del(id);
    return RemoveResult::removed;
}

// ---------------------------------------------------------------------------
// Persistence

std::string Store::save_text() const {
    std::lock_guard<std::mutex> lock(mu_);
    const State& s = *state_;
    std::ostringstream out;
    out << "# metahood db v1\n";
    out << "M rollup_depth " << rollup_depth_ << "\n";
    for (const auto& [k, v] : s.meta) out << "M " << k << " " << v << "\n";
    for (const auto& [rtype, n] : s.activity.by_rtype) out << "A t " << rtype << " " << n << "\n";
    for (const auto& [owner, m] : s.activity.by_owner)
        for (const auto& [rtype, n] : m)
            out << "A u " << encode_name(owner) << " " << rtype << " " << n << "\n";
    for (const auto& [jobid, m] : s.activity.by_jobid)
        for (const auto& [rtype, n] : m)
            out << "A j " << encode_name(jobid) << " " << rtype << " " << n << "\n";
    std::vector<std::string> elines, rlines;
    for (const auto& [id, e] : s.entries) elines.push_back(format_entry_line(e, true));
    for (const auto& [id, r] : s.softrm) rlines.push_back(format_softrm_line(r));
    std::sort(elines.begin(), elines.end());
    std::sort(rlines.begin(), rlines.end());
    for (const auto& l : elines) out << l << "\n";
    for (const auto& l : rlines) out << l << "\n";
    return out.str();
}

void Store::load_text(const std::string& text) {
    auto fresh = std::make_unique<State>();
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == 'E') {
            EntryRecord e = parse_entry_line(line);
            fresh->entries[e.id] = e;
        } else if (line[0] == 'R') {
            SoftRmRecord r = parse_softrm_line(line);
            fresh->softrm[r.id] = r;
        } else if (line[0] == 'M') {
            auto f = split_ws(line);
            if (f.size() != 3) throw ParseError("bad meta line: " + line);
            if (f[1] == "rollup_depth") rollup_depth_ = to_u64(f[2]);
            else fresh->meta[f[1]] = to_u64(f[2]);
        } else if (line[0] == 'A') {
            auto f = split_ws(line);
            if (f.size() < 4) throw ParseError("bad activity line: " + line);
            if (f[1] == "t") fresh->activity.by_rtype[f[2]] = to_u64(f[3]);
            else if (f[1] == "u" && f.size() == 5)
                fresh->activity.by_owner[decode_name(f[2])][f[3]] = to_u64(f[4]);
            else if (f[1] == "j" && f.size() == 5)
                fresh->activity.by_jobid[decode_name(f[2])][f[3]] = to_u64(f[4]);
            else throw ParseError("bad activity line: " + line);
        } else {
            throw ParseError("unknown line tag: " + line);
        }
    }

    // derived state: children index, ledger, rollups, pending tag count
    std::uint64_t pending = 0;
    for (const auto& [id, e] : fresh->entries) {
        if (!e.is_root()) fresh->children[e.parent][e.name] = id;
        on_delta(fresh->ledger, nullptr, &e);
        if (e.dirty_mask != 0) pending++;
    }
    fresh->meta[kMetaPendingTags] = pending;

    {
        std::lock_guard<std::mutex> lock(mu_);
        state_ = std::move(fresh);
    }
    txn([&](StoreTxn& t) { rebuild_rollup_table(t, rollup_depth_); });
}

void Store::save_file(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << save_text();
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

void Store::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    load_text(buf.str());
}

// ---------------------------------------------------------------------------
// Sharded store

namespace {

// One logical transaction spanning every shard; each shard's transaction
// commits (or rolls back) individually.
class RoutedTxn : public StoreTxn {
public:
    RoutedTxn(std::vector<PlainTxn*> txns, const ShardRouter& router)
        : txns_(std::move(txns)), router_(router) {}

    StoreTxn& by_id(const EntryId& id) { return *txns_[router_.route(id)]; }

    std::optional<EntryRecord> entry_get(const EntryId& id) override { return by_id(id).entry_get(id); }
    void entry_put(const EntryRecord& rec) override { by_id(rec.id).entry_put(rec); }
    void entry_del(const EntryId& id) override { by_id(id).entry_del(id); }

    std::optional<SoftRmRecord> softrm_get(const EntryId& id) override { return by_id(id).softrm_get(id); }
    void softrm_put(const SoftRmRecord& rec) override { by_id(rec.id).softrm_put(rec); }
    void softrm_del(const EntryId& id) override { by_id(id).softrm_del(id); }

    std::map<std::string, EntryId> children_of(const EntryId& parent) override {
        return by_id(parent).children_of(parent);
    }
    std::optional<EntryId> child_get(const EntryId& parent, const std::string& name) override {
        return by_id(parent).child_get(parent, name);
    }
    void child_link(const EntryId& parent, const std::string& name, const EntryId& id) override {
        by_id(parent).child_link(parent, name, id);
    }
    void child_unlink(const EntryId& parent, const std::string& name) override {
        by_id(parent).child_unlink(parent, name);
    }

    void ledger_entry_delta(const EntryRecord* before, const EntryRecord* after) override {
        const EntryRecord* any = before ? before : after;
        by_id(any->id).ledger_entry_delta(before, after);
    }

    void ledger_cell_add(Dim dim, const std::string& key, const std::string& second,
                         const AggCell& delta) override {
        txns_[0]->ledger_cell_add(dim, key, second, delta);
    }

    void activity_bump(const std::string& rtype, const std::string& owner,
                       const std::string& jobid) override {
        txns_[0]->activity_bump(rtype, owner, jobid);
    }

    void rollup_adjust(const EntryId& dir, const RollupCell& delta) override {
        by_id(dir).rollup_adjust(dir, delta);
    }
    void rollup_put(const EntryId& dir, const RollupCell& cell) override {
        by_id(dir).rollup_put(dir, cell);
    }
    void rollup_del(const EntryId& dir) override { by_id(dir).rollup_del(dir); }
    void rollup_clear() override {
        for (auto* t : txns_) t->rollup_clear();
    }
    std::optional<RollupCell> rollup_get(const EntryId& dir) override {
        return by_id(dir).rollup_get(dir);
    }
    void for_each_rollup(
        const std::function<void(const EntryId&, const RollupCell&)>& fn) override {
        for (auto* t : txns_) t->for_each_rollup(fn);
    }

    std::uint64_t meta_get(const std::string& key) override { return txns_[0]->meta_get(key); }
    void meta_set(const std::string& key, std::uint64_t value) override {
        txns_[0]->meta_set(key, value);
    }
    void meta_del_prefix(const std::string& prefix) override { txns_[0]->meta_del_prefix(prefix); }

    void for_each_entry(const std::function<void(const EntryRecord&)>& fn) override {
        for (auto* t : txns_) t->for_each_entry(fn);
    }
    void for_each_softrm(const std::function<void(const SoftRmRecord&)>& fn) override {
        for (auto* t : txns_) t->for_each_softrm(fn);
    }

private:
    std::vector<PlainTxn*> txns_;
    const ShardRouter& router_;
};

}  // namespace

ShardedStore::ShardedStore(std::vector<std::unique_ptr<Store>> shards)
    : shards_(std::move(shards)) {
    router_.k = static_cast<int>(shards_.size());
}

bool ShardedStore::txn(const std::function<void(StoreTxn&)>& body) {
    std::lock_guard<std::mutex> big(txn_mu_);
    // Open one transaction per shard; commit each individually at the end.
    struct ShardCtx {
        std::unique_lock<std::mutex> lock;
        std::unique_ptr<PlainTxn> txn;
        Store* store;
    };
    std::vector<ShardCtx> ctxs;
    std::vector<PlainTxn*> raw;
    for (auto& s : shards_) {
        ShardCtx c;
        c.store = s.get();
        c.lock = std::unique_lock<std::mutex>(s->mu_);
        c.txn = std::make_unique<PlainTxn>(*s->state_, s->entry_reads_);
        raw.push_back(c.txn.get());
        ctxs.push_back(std::move(c));
    }
    RoutedTxn routed(raw, router_);
    try {
        body(routed);
    } catch (const TxnAbort&) {
        for (auto& c : ctxs) {
            c.txn->rollback();
            c.store->txns_aborted_++;
        }
        return false;
    } catch (...) {
        for (auto& c : ctxs) {
            c.txn->rollback();
            c.store->txns_aborted_++;
        }
        throw;
    }
    for (auto& c : ctxs) c.store->txns_committed_++;
    return true;
}

AggregateLedger ShardedStore::ledger_snapshot() const {
    AggregateLedger out;
    for (const auto& s : shards_) out.add(s->ledger_snapshot());
    return out;
}

ActivityCounters ShardedStore::activity_snapshot() const {
    ActivityCounters out;
    for (const auto& s : shards_) out.add(s->activity_snapshot());
    return out;
}

std::optional<RollupCell> ShardedStore::rollup(const EntryId& dir) const {
    return shards_[router_.route(dir)]->rollup(dir);
}

StoreStats ShardedStore::stats() const {
    StoreStats out;
    for (const auto& s : shards_) {
        StoreStats one = s->stats();
        out.entry_reads += one.entry_reads;
        out.txns_committed += one.txns_committed;
        out.txns_aborted += one.txns_aborted;
    }
    return out;
}

std::unique_ptr<MirrorStore> open_store(const std::string& path, int shards,
                                        std::uint64_t rollup_depth) {
    auto exists = [](const std::string& p) {
        std::ifstream f(p);
        return f.good();
    };
    if (shards <= 1) {
        auto s = std::make_unique<Store>(rollup_depth);
        if (!path.empty() && exists(path)) s->load_file(path);
        return s;
    }
    std::vector<std::unique_ptr<Store>> parts;
    for (int i = 0; i < shards; i++) {
        auto s = std::make_unique<Store>(rollup_depth);
        std::string p = path + "." + std::to_string(i);
        if (!path.empty() && exists(p)) s->load_file(p);
        parts.push_back(std::move(s));
    }
    return std::make_unique<ShardedStore>(std::move(parts));
}

void save_store(MirrorStore& store, const std::string& path) {
    if (path.empty()) return;
    if (auto* plain = dynamic_cast<Store*>(&store)) {
        plain->save_file(path);
        return;
    }
    auto* sharded = dynamic_cast<ShardedStore*>(&store);
    for (int i = 0; i < sharded->shard_count(); i++)
        sharded->shard(i).save_file(path + "." + std::to_string(i));
}

// ---------------------------------------------------------------------------
// Undelete

UndeleteOutcome undelete(MirrorStore& store, const ArchiveBackend* backend,
                         const std::string& selector, std::int64_t now) {
    std::optional<EntryId> by_fid;
    try {
        by_fid = parse_entry_id(selector);
    } catch (const ParseError&) {
    }

    UndeleteOutcome outcome;
    store.txn([&](StoreTxn& t) {
        MirrorTxn m(t, store.rollup_depth());
        std::vector<SoftRmRecord> matches;
        t.for_each_softrm([&](const SoftRmRecord& r) {
            bool hit = by_fid ? r.id == *by_fid
                              : ::fnmatch(selector.c_str(), r.last_known_path.c_str(),
                                          FNM_PATHNAME) == 0;
            if (hit) matches.push_back(r);
        });
        std::sort(matches.begin(), matches.end(),
                  [](const SoftRmRecord& a, const SoftRmRecord& b) { return a.id < b.id; });

        std::optional<EntryRecord> root;
        if (!matches.empty())
            t.for_each_entry([&](const EntryRecord& e) {
                if (e.is_root() && !root) root = e;
            });

        for (const auto& row : matches) {
            if (!row.archived) {
                outcome.refused.emplace_back(row.id, "not archived");
                continue;
            }
            std::string key = format_entry_id(row.id);
            if (!backend || !backend->fetch(key)) {
                outcome.refused.emplace_back(row.id, "archive copy missing");
                continue;
            }

            // split path into components
            std::vector<std::string> parts;
            std::size_t pos = 0;
            const std::string& p = row.last_known_path;
            while (pos < p.size()) {
                while (pos < p.size() && p[pos] == '/') pos++;
                std::size_t end = pos;
                while (end < p.size() && p[end] != '/') end++;
                if (end > pos) parts.push_back(p.substr(pos, end - pos));
                pos = end;
            }
            if (parts.empty()) {
                outcome.refused.emplace_back(row.id, "empty path");
                continue;
            }
            if (!root) {
                outcome.refused.emplace_back(row.id, "mirror has no root");
                continue;
            }

            std::uint64_t gen = t.meta_get(kMetaGeneration);
            EntryId parent = root->id;
            std::string prefix;
            bool failed = false;
            for (std::size_t i = 0; i + 1 < parts.size(); i++) {
                prefix += "/" + parts[i];
                auto child = t.child_get(parent, parts[i]);
                if (child) {
                    auto rec = t.entry_get(*child);
                    if (!rec || rec->etype != EntryType::dir) {
                        outcome.refused.emplace_back(row.id, "path occupied at " + prefix);
                        failed = true;
                        break;
                    }
                    parent = *child;
                    continue;
                }
                EntryRecord dir;
                dir.id = EntryId{stable_hash(prefix), 0xFFFFFFFFu, 0};
                dir.parent = parent;
                dir.name = parts[i];
                dir.etype = EntryType::dir;
                dir.size = 4096;
                dir.blocks = 8;
                dir.owner = row.owner;
                dir.group = row.owner;
                dir.mode = 0755;
                dir.atime = dir.mtime = dir.ctime = now;
                dir.md_gen = gen;
                m.upsert(dir);
                auto prec = t.entry_get(parent);
                prec->dircount++;
                m.upsert(*prec);
                parent = dir.id;
            }
            if (failed) continue;

            const std::string& leaf = parts.back();
            if (t.child_get(parent, leaf)) {
                outcome.refused.emplace_back(row.id, "path occupied");
                continue;
            }

            EntryRecord e;
            e.id = row.id;
            e.parent = parent;
            e.name = leaf;
            e.etype = EntryType::file;
            e.size = row.size;
            e.blocks = 0;  // data lives in the archive until restored
            e.owner = row.owner;
            e.group = row.owner;
            e.mode = 0644;
            e.atime = e.mtime = e.ctime = now;
            e.hsm = HsmState::released;
            e.md_gen = gen;
            m.upsert(e);
            auto prec = t.entry_get(parent);
            prec->dircount++;
            m.upsert(*prec);
            t.softrm_del(row.id);
            outcome.restored++;
        }
    });
    return outcome;
}

// ---------------------------------------------------------------------------
// Aggregate audit

namespace {

void diff_cells(const std::string& dim, const std::string& key, const AggCell* maintained,
                const AggCell* expected, std::vector<std::string>& out) {
    AggCell zero;
    const AggCell& m = maintained ? *maintained : zero;
    const AggCell& e = expected ? *expected : zero;
    if (m == e) return;
    out.push_back("cell " + dim + "[" + key + "]: maintained {count=" + std::to_string(m.count) +
                  " volume=" + std::to_string(m.volume) + " space=" + std::to_string(m.space_used) +
                  "} expected {count=" + std::to_string(e.count) +
                  " volume=" + std::to_string(e.volume) + " space=" + std::to_string(e.space_used) +
                  "}");
}

template <typename Map>
void diff_maps(const std::string& dim, Map maintained, Map expected,
               std::vector<std::string>& out) {
    for (auto it = maintained.begin(); it != maintained.end();) {
        if (it->second.is_zero()) it = maintained.erase(it);
        else ++it;
    }
    for (auto it = expected.begin(); it != expected.end();) {
        if (it->second.is_zero()) it = expected.erase(it);
        else ++it;
    }
    auto key_text = [](const auto& k) {
        if constexpr (std::is_same_v<std::decay_t<decltype(k)>, std::string>) return k;
        else return k.first + "/" + k.second;
    };
    for (const auto& [k, cell] : expected) {
        auto it = maintained.find(k);
        diff_cells(dim, key_text(k), it == maintained.end() ? nullptr : &it->second, &cell, out);
    }
    for (const auto& [k, cell] : maintained)
        if (!expected.count(k)) diff_cells(dim, key_text(k), &cell, nullptr, out);
}

}  // namespace

std::vector<std::string> verify_aggregates(MirrorStore& store) {
    std::vector<std::string> out;

    AggregateLedger expected;
    std::map<EntryId, RollupCell> expected_rollups;
    std::map<EntryId, RollupCell> actual_rollups;
    std::uint64_t dirty_entries = 0;
    std::uint64_t pending_meta = 0;

    store.txn([&](StoreTxn& t) {
        std::vector<EntryRecord> entries;
        t.for_each_entry([&](const EntryRecord& e) { entries.push_back(e); });
        std::map<EntryId, EntryId> parent_of;
        for (const auto& e : entries) parent_of[e.id] = e.parent;
        auto depth_of = [&](EntryId id) {
            std::uint64_t d = 0;
            for (int hops = 0; hops < 4096; hops++) {
                auto it = parent_of.find(id);
                if (it == parent_of.end() || it->second.is_null()) return d;
                id = it->second;
                d++;
            }
            return d;
        };
        for (const auto& e : entries) {
            on_delta(expected, nullptr, &e);
            if (e.dirty_mask != 0) dirty_entries++;
            if (e.etype == EntryType::dir && depth_of(e.id) <= store.rollup_depth() &&
                store.rollup_depth() != 0)
                expected_rollups[e.id];  // row must exist
        }
        for (const auto& e : entries) {
            if (e.is_root()) continue;
            RollupCell c = rollup_contribution(e);
            EntryId cur = e.parent;
            for (int hops = 0; hops < 4096; hops++) {
                auto row = expected_rollups.find(cur);
                if (row != expected_rollups.end()) {
                    row->second.count += c.count;
                    row->second.volume += c.volume;
                    row->second.space += c.space;
                }
                auto it = parent_of.find(cur);
                if (it == parent_of.end() || it->second.is_null()) break;
                cur = it->second;
            }
        }
        pending_meta = t.meta_get(kMetaPendingTags);
        t.for_each_rollup([&](const EntryId& dir, const RollupCell& cell) {
            actual_rollups[dir] = cell;
        });
    });

    AggregateLedger maintained = store.ledger_snapshot();
    diff_maps("owner", maintained.owner, expected.owner, out);
    diff_maps("group", maintained.group, expected.group, out);
    diff_maps("type", maintained.etype, expected.etype, out);
    diff_maps("hsm_state", maintained.hsm, expected.hsm, out);
    diff_maps("owner_type", maintained.owner_type, expected.owner_type, out);
    diff_cells("total", "*", &maintained.total, &expected.total, out);

    for (const auto& [dir, cell] : expected_rollups) {
        auto it = actual_rollups.find(dir);
        if (it == actual_rollups.end())
            out.push_back("rollup[" + format_entry_id(dir) + "]: row missing");
        else if (!(it->second == cell))
            out.push_back("rollup[" + format_entry_id(dir) + "]: maintained {" +
                          std::to_string(it->second.count) + "," +
                          std::to_string(it->second.volume) + "," +
                          std::to_string(it->second.space) + "} expected {" +
                          std::to_string(cell.count) + "," + std::to_string(cell.volume) + "," +
                          std::to_string(cell.space) + "}");
    }
    for (const auto& [dir, cell] : actual_rollups)
        if (!expected_rollups.count(dir))
            out.push_back("rollup[" + format_entry_id(dir) + "]: unexpected row");

    if (pending_meta != dirty_entries)
        out.push_back("pending_tags meta " + std::to_string(pending_meta) + " != dirty entries " +
                      std::to_string(dirty_entries));

    // activity internal consistency: per-owner and per-jobid sums match totals
    ActivityCounters act = store.activity_snapshot();
    std::map<std::string, std::uint64_t> owner_sum, jobid_sum;
    for (const auto& [o, m] : act.by_owner)
        for (const auto& [rt, n] : m) owner_sum[rt] += n;
    for (const auto& [j, m] : act.by_jobid)
        for (const auto& [rt, n] : m) jobid_sum[rt] += n;
    for (const auto& [rt, n] : act.by_rtype) {
        if (owner_sum[rt] != n)
            out.push_back("activity owner sum for " + rt + ": " + std::to_string(owner_sum[rt]) +
                          " != " + std::to_string(n));
        if (jobid_sum[rt] != n)
            out.push_back("activity jobid sum for " + rt + ": " + std::to_string(jobid_sum[rt]) +
                          " != " + std::to_string(n));
    }

    return out;
}

}  // namespace metahood
