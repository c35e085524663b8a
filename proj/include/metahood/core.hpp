// Shared domain types for the metadata mirror: entry identifiers, entry
// records, size/duration units, size-profile bucketing and path resolution.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace metahood {

// ---------------------------------------------------------------------------
// Errors

// Malformed text in any of the canonical wire forms (ids, sizes, durations,
// changelog lines, config files). Carries the offending token in the message.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// resolve_path failures: broken parent chain or parent-link cycle.
class PathError : public std::runtime_error {
public:
    enum class Kind { unresolved, cycle };

    PathError(Kind kind, std::string suffix)
        : std::runtime_error(kind == Kind::cycle
                                 ? "parent-link cycle while resolving path"
                                 : "unresolved path, deepest resolvable suffix: " + suffix),
          kind_(kind),
          suffix_(std::move(suffix)) {}

    Kind kind() const { return kind_; }
    // Deepest resolvable suffix ("/name/name" from the requested entry up to
    // the first missing ancestor).
    const std::string& suffix() const { return suffix_; }

private:
    Kind kind_;
    std::string suffix_;
};

// ---------------------------------------------------------------------------
// EntryId

// Stable FID-like identifier, the primary key of the mirror. (0,0,0) is the
// reserved null id.
struct EntryId {
    std::uint64_t seq = 0;
    std::uint32_t oid = 0;
    std::uint32_t ver = 0;

    bool is_null() const { return seq == 0 && oid == 0 && ver == 0; }

    friend bool operator==(const EntryId&, const EntryId&) = default;
    friend auto operator<=>(const EntryId&, const EntryId&) = default;
};

inline const EntryId kNullId{};

// Canonical text form "0x<seq>:0x<oid>:0x<ver>", lowercase hex.
std::string format_entry_id(const EntryId& id);
EntryId parse_entry_id(std::string_view text);

// ---------------------------------------------------------------------------
// Enumerations

enum class EntryType { file, dir, symlink };

std::string_view to_string(EntryType t);
EntryType parse_entry_type(std::string_view text);

enum class HsmState { none, hsm_new, archiving, archived, dirty, released };

std::string_view to_string(HsmState s);
HsmState parse_hsm_state(std::string_view text);

// HSM state-machine events. The legality table lives here so that both the
// simulated filesystem and the policy engine drive identical transitions.
enum class HsmEvent { archive_start, archive_done, modify, release, restore, unlink };

std::string_view to_string(HsmEvent e);

// Legal transition or nullopt. "modify" on released means restore-then-dirty;
// callers that track allocations handle that side effect themselves.
std::optional<HsmState> hsm_next_state(HsmState from, HsmEvent event);

// ---------------------------------------------------------------------------
// EntryRecord

// Bits of EntryRecord::dirty_mask.
inline constexpr std::uint32_t kNeedStat = 1u << 0;
inline constexpr std::uint32_t kNeedPath = 1u << 1;

// One filesystem object's mirrored attributes.
struct EntryRecord {
    EntryId id;
    EntryId parent;
    std::string name;                 // single path component, "" only for root
    EntryType etype = EntryType::file;
    std::uint64_t size = 0;           // logical bytes
    std::uint64_t blocks = 0;         // 512-byte blocks
    std::string owner;
    std::string group;
    std::uint32_t mode = 0;           // 12-bit octal permissions
    std::int64_t atime = 0;
    std::int64_t mtime = 0;
    std::int64_t ctime = 0;
    std::vector<std::uint32_t> ost_set;  // ordered OST indices, empty for dirs/symlinks
    std::string pool;                 // "" when not pooled
    HsmState hsm = HsmState::none;
    std::uint64_t dircount = 0;       // child count, dirs only
    std::uint64_t md_gen = 0;         // scan generation bookkeeping
    std::uint32_t dirty_mask = 0;     // kNeedStat | kNeedPath

    bool is_root() const { return parent.is_null() && name.empty(); }

    friend bool operator==(const EntryRecord&, const EntryRecord&) = default;
};

// ---------------------------------------------------------------------------
// Units

// Binary-unit byte sizes: "<int>[KB|MB|GB|TB|PB]", bare integer = bytes.
std::uint64_t parse_size(std::string_view text);
// Canonical form: largest unit dividing the value exactly, else bare bytes.
// parse_size(format_size(v)) == v for all v.
std::string format_size(std::uint64_t bytes);

// Human form used by reports: bare integer below 1K, otherwise two decimals
// with the largest binary unit ("1.21 GB", "4.00 KB", "61").
std::string format_size_human(std::uint64_t bytes);

// Durations in seconds: "<int>[s|m|h|d|w]", d = 86400 s, w = 7 d.
std::uint64_t parse_duration(std::string_view text);
// Canonical form mirrors format_size: largest suffix dividing exactly.
std::string format_duration(std::uint64_t seconds);

// ---------------------------------------------------------------------------
// Size profile

inline constexpr int kSizeBuckets = 9;

// Bucket boundaries in x32 steps from 1K:
//   [0]=0, (0,1K), [1K,32K), [32K,1M), [1M,32M), [32M,1G), [1G,32G),
//   [32G,1T), [1T,inf)
int size_bucket(std::uint64_t size);

// Left edge of bucket i (0 for buckets 0 and 1).
std::uint64_t size_bucket_floor(int bucket);
// Label like "0", "1..1K", "1K..32K", ..., "1T..inf".
std::string size_bucket_label(int bucket);

// ---------------------------------------------------------------------------
// Name / path encoding

// Percent-encoding for names and paths in wire formats: space, '%' and
// newline are escaped; the empty name (root) encodes as "%00".
std::string encode_name(std::string_view name);
std::string decode_name(std::string_view text);

// ---------------------------------------------------------------------------
// Entry wire format

// Snapshot-dump line: `E <fid> <parent_fid> <type> <name-encoded> <size>
// <blocks> <owner> <group> <mode-octal> <atime> <mtime> <ctime>
// <ost-list-comma|-> <pool|-> <hsm> <dircount>`; extended form appends
// `<md_gen> <dirty_mask>` for db files.
std::string format_entry_line(const EntryRecord& e, bool extended);
EntryRecord parse_entry_line(const std::string& line);

// Whitespace-separated fields of one line.
std::vector<std::string> split_ws(const std::string& line);

// ---------------------------------------------------------------------------
// Hashing

// FNV-1a over bytes; the stable hash used by the shard router and the
// scan partitioner.
std::uint64_t stable_hash(std::string_view bytes);

// ---------------------------------------------------------------------------
// Path resolution

using EntryLookup = std::function<std::optional<EntryRecord>(const EntryId&)>;

// Absolute path of `id` by walking parent links up to the root. Root resolves
// to "/". Throws PathError on a broken chain or after 4096 hops.
std::string resolve_path(const EntryLookup& lookup, const EntryId& id);

}  // namespace metahood
