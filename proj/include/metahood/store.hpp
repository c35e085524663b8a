// Transactional metadata mirror: keyed entry table, soft-rm table, children
// index, attribute queries, deterministic snapshot dump, hash sharding.
#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "metahood/aggregates.hpp"
#include "metahood/core.hpp"
#include "metahood/policyspec.hpp"

namespace metahood {

// Deleted-entry bookkeeping for undelete.
struct SoftRmRecord {
    EntryId id;
    std::string last_known_path;
    std::uint64_t size = 0;
    std::string owner;
    std::int64_t rm_time = 0;
    bool archived = false;  // an HSM copy exists

    friend bool operator==(const SoftRmRecord&, const SoftRmRecord&) = default;
};

enum class SortKey { size, atime, mtime, name, path };

struct QuerySpec {
    ExprPtr filter;  // null matches everything
    SortKey sort = SortKey::name;
    bool descending = false;
    std::size_t limit = SIZE_MAX;
    std::size_t offset = 0;
    std::int64_t now = 0;  // evaluation time for age comparisons
};

// Archive backend handle used by undelete and the HSM engine: a keyed
// copy-by-value map of content hashes. Keys are canonical fid texts.
class ArchiveBackend {
public:
    virtual ~ArchiveBackend() = default;
    virtual void put(const std::string& key, std::uint64_t content_hash) = 0;
    virtual std::optional<std::uint64_t> fetch(const std::string& key) const = 0;
    virtual void erase(const std::string& key) = 0;
};

// Thrown by StoreTxn::abort(); unwinds the transaction body.
struct TxnAbort {};

// Raw routed table operations available inside a transaction. The sharded
// store routes each call by key, so one logical transaction may span shards
// (per-shard atomicity; see ShardedStore).
class StoreTxn {
public:
    virtual ~StoreTxn() = default;

    virtual std::optional<EntryRecord> entry_get(const EntryId& id) = 0;
    virtual void entry_put(const EntryRecord& rec) = 0;
    virtual void entry_del(const EntryId& id) = 0;

    virtual std::optional<SoftRmRecord> softrm_get(const EntryId& id) = 0;
    virtual void softrm_put(const SoftRmRecord& rec) = 0;
    virtual void softrm_del(const EntryId& id) = 0;

    // Children edges are keyed (and routed) by the parent directory.
    virtual std::map<std::string, EntryId> children_of(const EntryId& parent) = 0;
    virtual std::optional<EntryId> child_get(const EntryId& parent, const std::string& name) = 0;
    virtual void child_link(const EntryId& parent, const std::string& name, const EntryId& id) = 0;
    virtual void child_unlink(const EntryId& parent, const std::string& name) = 0;

    // Dimension-cell delta for one entry, applied on the entry's shard.
    virtual void ledger_entry_delta(const EntryRecord* before, const EntryRecord* after) = 0;

    // Raw single-cell adjustment (audit and test surface).
    virtual void ledger_cell_add(Dim dim, const std::string& key, const std::string& second,
                                 const AggCell& delta) = 0;

    virtual void activity_bump(const std::string& rtype, const std::string& owner,
                               const std::string& jobid) = 0;

    virtual void rollup_adjust(const EntryId& dir, const RollupCell& delta) = 0;
    virtual void rollup_put(const EntryId& dir, const RollupCell& cell) = 0;
    virtual void rollup_del(const EntryId& dir) = 0;
    virtual void rollup_clear() = 0;
    virtual std::optional<RollupCell> rollup_get(const EntryId& dir) = 0;
    virtual void for_each_rollup(
        const std::function<void(const EntryId&, const RollupCell&)>& fn) = 0;

    virtual std::uint64_t meta_get(const std::string& key) = 0;
    virtual void meta_set(const std::string& key, std::uint64_t value) = 0;
    virtual void meta_del_prefix(const std::string& prefix) = 0;

    virtual void for_each_entry(const std::function<void(const EntryRecord&)>& fn) = 0;
    virtual void for_each_softrm(const std::function<void(const SoftRmRecord&)>& fn) = 0;

    [[noreturn]] void abort() { throw TxnAbort{}; }
};

struct StoreStats {
    std::uint64_t entry_reads = 0;  // entry-table rows fetched or visited
    std::uint64_t txns_committed = 0;
    std::uint64_t txns_aborted = 0;
};

enum class DumpSections { all, live_only };

// Well-known meta keys.
inline constexpr const char* kMetaCursor = "cursor";
inline constexpr const char* kMetaGeneration = "generation";
inline constexpr const char* kMetaPendingTags = "pending_tags";

class MirrorStore {
public:
    virtual ~MirrorStore() = default;

    // Runs body atomically; false when the body called abort().
    virtual bool txn(const std::function<void(StoreTxn&)>& body) = 0;

    virtual int shard_count() const = 0;
    virtual std::uint64_t rollup_depth() const = 0;

    // Read-only conveniences (each takes a short internal transaction).
    std::optional<EntryRecord> get(const EntryId& id);
    std::optional<SoftRmRecord> get_softrm(const EntryId& id);
    std::map<std::string, EntryId> children(const EntryId& parent);
    std::uint64_t meta(const std::string& key);
    void for_each_entry(const std::function<void(const EntryRecord&)>& fn);
    void for_each_softrm(const std::function<void(const SoftRmRecord&)>& fn);

    std::uint64_t ack_cursor() { return meta(kMetaCursor); }
    std::uint64_t generation() { return meta(kMetaGeneration); }
    std::uint64_t pending_tags() { return meta(kMetaPendingTags); }

    // Exactly the entries whose attributes satisfy the filter, ordered by
    // sort key with id as tiebreaker.
    std::vector<EntryRecord> query(const QuerySpec& q);

    // Absolute path from the mirror's parent links.
    std::string path_of(const EntryId& id);

    // Aggregate read path: never touches entry rows.
    virtual AggregateLedger ledger_snapshot() const = 0;
    virtual ActivityCounters activity_snapshot() const = 0;
    virtual std::optional<RollupCell> rollup(const EntryId& dir) const = 0;

    virtual StoreStats stats() const = 0;

    // One line per live entry sorted by canonical fid text, then the soft-rm
    // section; bit-exact stable across runs and shard counts.
    std::string dump_snapshot(DumpSections sections = DumpSections::all);
};

// Mutation helper bound to an open transaction: keeps the children index,
// ledger cells and subtree rollups coherent with entry mutations. Parent
// dircounts stay with the caller.
class MirrorTxn {
public:
    MirrorTxn(StoreTxn& t, std::uint64_t rollup_depth) : t_(t), depth_(rollup_depth) {}

    std::optional<EntryRecord> get(const EntryId& id) { return t_.entry_get(id); }
    void upsert(const EntryRecord& rec);

    enum class RemoveResult { removed, absent };
    RemoveResult remove(const EntryId& id, bool to_softrm, std::int64_t rm_time);

    // Path via parent links as currently mirrored (for soft-rm rows).
    std::string path_of(const EntryId& id);

    StoreTxn& raw() { return t_; }

private:
    friend class StoreBase;
    std::vector<EntryId> ancestor_dirs(const EntryId& parent);
    void rollup_insert_entry(const EntryRecord& rec);
    void rollup_remove_entry(const EntryRecord& rec);
    void rebuild_rollups();
    std::uint64_t dir_depth(const EntryId& id);

    StoreTxn& t_;
    std::uint64_t depth_;
};

// Rebuild the rollup table from scratch (used after subtree moves and on
// load). Runs inside the given transaction.
void rebuild_rollup_table(StoreTxn& t, std::uint64_t rollup_depth);

// ---------------------------------------------------------------------------
// Plain single-backend store

class Store : public MirrorStore {
public:
    explicit Store(std::uint64_t rollup_depth = 2);
    ~Store() override;

    bool txn(const std::function<void(StoreTxn&)>& body) override;
    int shard_count() const override { return 1; }
    std::uint64_t rollup_depth() const override { return rollup_depth_; }

    AggregateLedger ledger_snapshot() const override;
    ActivityCounters activity_snapshot() const override;
    std::optional<RollupCell> rollup(const EntryId& dir) const override;
    StoreStats stats() const override;

    // Full-fidelity persistence (dump format plus meta/activity/bookkeeping
    // columns). save() writes atomically via rename.
    void save_file(const std::string& path) const;
    void load_file(const std::string& path);

    // Restore from snapshot-dump text (bookkeeping columns optional).
    void load_text(const std::string& text);
    std::string save_text() const;

    struct State;  // opaque; table maps live in the .cpp

private:
    friend class ShardedStore;
    std::unique_ptr<State> state_;
    mutable std::mutex mu_;
    std::uint64_t rollup_depth_;
    mutable std::atomic<std::uint64_t> entry_reads_{0};
    std::atomic<std::uint64_t> txns_committed_{0};
    std::atomic<std::uint64_t> txns_aborted_{0};
};

// ---------------------------------------------------------------------------
// Sharding

// route(id) = stable_hash(canonical fid text) mod k.
struct ShardRouter {
    int k = 1;
    int route(const EntryId& id) const {
        return static_cast<int>(stable_hash(format_entry_id(id)) % static_cast<std::uint64_t>(k));
    }
};

// Composite store: keyed operations route by id, queries fan out and
// merge-sort, aggregates sum at read. Transactions are split per shard and
// are individually atomic (documented relaxation). Meta and activity rows
// live on shard 0.
class ShardedStore : public MirrorStore {
public:
    explicit ShardedStore(std::vector<std::unique_ptr<Store>> shards);

    bool txn(const std::function<void(StoreTxn&)>& body) override;
    int shard_count() const override { return static_cast<int>(shards_.size()); }
    std::uint64_t rollup_depth() const override { return shards_[0]->rollup_depth(); }

    AggregateLedger ledger_snapshot() const override;
    ActivityCounters activity_snapshot() const override;
    std::optional<RollupCell> rollup(const EntryId& dir) const override;
    StoreStats stats() const override;

    Store& shard(int i) { return *shards_[i]; }
    const ShardRouter& router() const { return router_; }

private:
    friend class RoutedTxn;
    std::vector<std::unique_ptr<Store>> shards_;
    ShardRouter router_;
    std::mutex txn_mu_;
};

// Open a store from a db path: "<path>" for one shard, "<path>.<i>" files
// when shards > 1. Missing files start empty.
std::unique_ptr<MirrorStore> open_store(const std::string& path, int shards,
                                        std::uint64_t rollup_depth = 2);
void save_store(MirrorStore& store, const std::string& path);

// ---------------------------------------------------------------------------
// Undelete

struct UndeleteOutcome {
    int restored = 0;
    std::vector<std::pair<EntryId, std::string>> refused;  // (id, reason)
};

// Selector is a canonical fid text or a path glob. Re-creates live entries at
// their last known paths (with missing ancestors), verifies the archive copy
// exists, and drops the soft-rm rows.
UndeleteOutcome undelete(MirrorStore& store, const ArchiveBackend* backend,
                         const std::string& selector, std::int64_t now);

// ---------------------------------------------------------------------------
// Audit

// Recomputes every dimension and rollup from the entry table and diffs
// against the maintained cells; also cross-checks activity-counter sums.
std::vector<std::string> verify_aggregates(MirrorStore& store);

}  // namespace metahood
