#include <doctest.h>

#include <map>
#include <random>

#include "metahood/core.hpp"

using namespace metahood;

TEST_CASE("entry id parses canonical form") {
    EntryId id = parse_entry_id("0x1:0x2:0x0");
    CHECK(id.seq == 1);
    CHECK(id.oid == 2);
    CHECK(id.ver == 0);
    CHECK(parse_entry_id("0x0:0x0:0x0").is_null());
    CHECK_THROWS_AS(parse_entry_id("0x1:0x2"), ParseError);
    CHECK_THROWS_AS(parse_entry_id("1:2:3"), ParseError);
    CHECK_THROWS_AS(parse_entry_id("0x1:0x2:0xzz"), ParseError);
    CHECK_THROWS_AS(parse_entry_id("0x1:0x2:0x0:0x4"), ParseError);
}

TEST_CASE("entry id format/parse round trip") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 500; i++) {
        EntryId id{rng(), static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng())};
        CHECK(parse_entry_id(format_entry_id(id)) == id);
    }
    std::string canon = "0xdeadbeef:0x1f:0x0";
    CHECK(format_entry_id(parse_entry_id(canon)) == canon);
}

TEST_CASE("size parsing uses binary units") {
    CHECK(parse_size("1GB") == 1073741824ull);
    CHECK(parse_size("1024") == 1024);
    CHECK(parse_size("16TB") == 17592186044416ull);
    CHECK(parse_size("0") == 0);
    CHECK_THROWS_AS(parse_size("1XB"), ParseError);
    CHECK_THROWS_AS(parse_size("-5"), ParseError);
    CHECK_THROWS_AS(parse_size("99999999999999999999"), ParseError);
    CHECK_THROWS_AS(parse_size("999999999999TB"), ParseError);
    CHECK_THROWS_AS(parse_size(""), ParseError);
}

TEST_CASE("size format/parse identity on random values") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1000; i++) {
        std::uint64_t v = rng() >> (rng() % 40);
        CHECK(parse_size(format_size(v)) == v);
    }
    CHECK(format_size(1073741824ull) == "1GB");
    CHECK(format_size(1536) == "1536");
    CHECK(format_size(0) == "0");
}

TEST_CASE("duration parsing") {
    CHECK(parse_duration("30d") == 2592000);
    CHECK(parse_duration("1h") == 3600);
    CHECK(parse_duration("1w") == 604800);
    CHECK(parse_duration("90") == 90);
    CHECK_THROWS_AS(parse_duration("5x"), ParseError);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; i++) {
        std::uint64_t v = rng() >> (rng() % 40);
        CHECK(parse_duration(format_duration(v)) == v);
    }
}

TEST_CASE("size buckets") {
    CHECK(size_bucket(0) == 0);
    CHECK(size_bucket(1) == 1);
    CHECK(size_bucket(1023) == 1);
    CHECK(size_bucket(1024) == 2);
    CHECK(size_bucket(1ull << 40) == 8);
    CHECK(size_bucket(UINT64_MAX) == 8);

    // every boundary maps to the bucket whose left edge is the boundary
    for (int b = 2; b <= 8; b++) {
        std::uint64_t edge = size_bucket_floor(b);
        CHECK(size_bucket(edge) == b);
        CHECK(size_bucket(edge - 1) == b - 1);
    }

    // monotone non-decreasing
    std::mt19937_64 rng(3);
    for (int i = 0; i < 2000; i++) {
        std::uint64_t a = rng() >> (rng() % 50);
        std::uint64_t b = rng() >> (rng() % 50);
        if (a > b) std::swap(a, b);
        CHECK(size_bucket(a) <= size_bucket(b));
    }
}

TEST_CASE("human size formatting") {
    CHECK(format_size_human(61) == "61");
    CHECK(format_size_human(0) == "0");
    CHECK(format_size_human(4096) == "4.00 KB");
    CHECK(format_size_human(1069056) == "1.02 MB");
    CHECK(format_size_human(12288) == "12.00 KB");
}

TEST_CASE("name encoding") {
    CHECK(encode_name("plain") == "plain");
    CHECK(encode_name("with space") == "with%20space");
    CHECK(encode_name("50%") == "50%25");
    CHECK(encode_name("") == "%00");
    CHECK(decode_name("%00") == "");
    CHECK(decode_name("a%20b") == "a b");

    std::mt19937_64 rng(5);
    const std::string alphabet = "abz019 %\n._-";
    for (int i = 0; i < 500; i++) {
        std::string name;
        int len = static_cast<int>(rng() % 12);
        for (int j = 0; j < len; j++) name += alphabet[rng() % alphabet.size()];
        std::string enc = encode_name(name);
        CHECK(enc.find(' ') == std::string::npos);
        CHECK(enc.find('\n') == std::string::npos);
        CHECK(decode_name(enc) == name);
    }
}

TEST_CASE("hsm transition table") {
    using S = HsmState;
    using E = HsmEvent;
    CHECK(hsm_next_state(S::none, E::archive_start) == S::archiving);
    CHECK(hsm_next_state(S::hsm_new, E::archive_start) == S::archiving);
    CHECK(hsm_next_state(S::dirty, E::archive_start) == S::archiving);
    CHECK(hsm_next_state(S::archiving, E::archive_done) == S::archived);
    CHECK(hsm_next_state(S::archived, E::modify) == S::dirty);
    CHECK(hsm_next_state(S::released, E::modify) == S::dirty);
    CHECK(hsm_next_state(S::archived, E::release) == S::released);
    CHECK(hsm_next_state(S::released, E::restore) == S::archived);
    CHECK(!hsm_next_state(S::hsm_new, E::release).has_value());
    CHECK(!hsm_next_state(S::none, E::release).has_value());
    CHECK(!hsm_next_state(S::none, E::archive_done).has_value());
    CHECK(!hsm_next_state(S::archived, E::restore).has_value());
}

namespace {

std::map<EntryId, EntryRecord> chain_fixture() {
    std::map<EntryId, EntryRecord> m;
    EntryRecord root;
    root.id = {1, 0, 0};
    root.etype = EntryType::dir;
    m[root.id] = root;
    EntryRecord b;
    b.id = {2, 0, 0};
    b.parent = root.id;
    b.name = "b";
    b.etype = EntryType::dir;
    m[b.id] = b;
    EntryRecord c;
    c.id = {3, 0, 0};
    c.parent = b.id;
    c.name = "c";
    m[c.id] = c;
    return m;
}

}  // namespace

TEST_CASE("path resolution") {
    auto m = chain_fixture();
    EntryLookup lookup = [&](const EntryId& id) -> std::optional<EntryRecord> {
        auto it = m.find(id);
        if (it == m.end()) return std::nullopt;
        return it->second;
    };
    CHECK(resolve_path(lookup, {1, 0, 0}) == "/");
    CHECK(resolve_path(lookup, {3, 0, 0}) == "/b/c");

    // recurrence: path(x) = path(parent) + "/" + name
    CHECK(resolve_path(lookup, {3, 0, 0}) ==
          resolve_path(lookup, {2, 0, 0}) + "/" + m[{3, 0, 0}].name);

    SUBCASE("broken chain carries deepest resolvable suffix") {
        m.erase(EntryId{2, 0, 0});
        try {
            resolve_path(lookup, {3, 0, 0});
            FAIL("expected PathError");
        } catch (const PathError& e) {
            CHECK(e.kind() == PathError::Kind::unresolved);
            CHECK(e.suffix() == "/c");
        }
    }

    SUBCASE("cycle detected") {
        m[{2, 0, 0}].parent = {3, 0, 0};  // b's parent is its own child
        try {
            resolve_path(lookup, {3, 0, 0});
            FAIL("expected PathError");
        } catch (const PathError& e) {
            CHECK(e.kind() == PathError::Kind::cycle);
        }
    }
}

TEST_CASE("entry line round trip") {
    std::mt19937_64 rng(23);
    const char* owners[] = {"alice", "bob", "carol"};
    for (int i = 0; i < 300; i++) {
        EntryRecord e;
        e.id = {rng() % 100000 + 1, static_cast<std::uint32_t>(rng() % 16), 0};
        e.parent = {rng() % 100 + 1, 0, 0};
        e.name = "f x" + std::to_string(rng() % 1000);
        e.etype = static_cast<EntryType>(rng() % 3);
        e.size = rng() >> (rng() % 40);
        e.blocks = e.size / 512;
        e.owner = owners[rng() % 3];
        e.group = owners[rng() % 3];
        e.mode = static_cast<std::uint32_t>(rng() % 07777);
        e.atime = static_cast<std::int64_t>(rng() % 2000000000);
        e.mtime = e.atime + 5;
        e.ctime = e.atime + 9;
        if (e.etype == EntryType::file) {
            int n = static_cast<int>(rng() % 4);
            for (int j = 0; j < n; j++) e.ost_set.push_back(static_cast<std::uint32_t>(rng() % 8));
            e.hsm = static_cast<HsmState>(rng() % 6);
        }
        if (e.etype == EntryType::dir) e.dircount = rng() % 50;
        if (rng() % 2) e.pool = "fast";
        e.md_gen = rng() % 10;
        e.dirty_mask = static_cast<std::uint32_t>(rng() % 4);

        CHECK(parse_entry_line(format_entry_line(e, true)) == e);
        EntryRecord plain = parse_entry_line(format_entry_line(e, false));
        EntryRecord trimmed = e;
        trimmed.md_gen = 0;
        trimmed.dirty_mask = 0;
        CHECK(plain == trimmed);
    }
}
