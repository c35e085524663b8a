#include <doctest.h>

#include <random>

#include "metahood/policyspec.hpp"

using namespace metahood;

namespace {

EntryRecord file_entry(std::uint64_t size, const std::string& owner) {
    EntryRecord e;
    e.id = {10, 0, 0};
    e.parent = {1, 0, 0};
    e.name = "x.tar";
    e.etype = EntryType::file;
    e.size = size;
    e.owner = owner;
    e.group = owner;
    return e;
}

}  // namespace

TEST_CASE("reference expression parses to the expected tree") {
    auto e = parse_expression("(size > 1GB or owner == 'foo') and path == /my/fs/*.tar");
    REQUIRE(e->kind == Expression::Kind::and_);
    REQUIRE(e->children.size() == 2);

    const Expression& disj = *e->children[0];
    REQUIRE(disj.kind == Expression::Kind::or_);
    REQUIRE(disj.children.size() == 2);
    CHECK(disj.children[0]->attr == Attr::size);
    CHECK(disj.children[0]->op == CmpOp::gt);
    CHECK(disj.children[0]->value.kind == ValueKind::size_bytes);
    CHECK(disj.children[0]->value.num == 1073741824ull);
    CHECK(disj.children[1]->attr == Attr::owner);
    CHECK(disj.children[1]->op == CmpOp::eq);
    CHECK(disj.children[1]->value.kind == ValueKind::string);
    CHECK(disj.children[1]->value.text == "foo");

    const Expression& cmp = *e->children[1];
    CHECK(cmp.attr == Attr::path);
    CHECK(cmp.op == CmpOp::eq);
    CHECK(cmp.value.kind == ValueKind::glob);
    CHECK(cmp.value.text == "/my/fs/*.tar");
}

TEST_CASE("precedence: not > and > or") {
    auto e = parse_expression("not size == 0 or type == file");
    REQUIRE(e->kind == Expression::Kind::or_);
    CHECK(e->children[0]->kind == Expression::Kind::not_);
    CHECK(e->children[0]->children[0]->attr == Attr::size);
    CHECK(e->children[1]->attr == Attr::type);

    auto f = parse_expression("size > 1 or owner == a and group == b");
    REQUIRE(f->kind == Expression::Kind::or_);
    CHECK(f->children[1]->kind == Expression::Kind::and_);

    auto g = parse_expression("not owner == a and group == b");
    REQUIRE(g->kind == Expression::Kind::and_);
    CHECK(g->children[0]->kind == Expression::Kind::not_);
}

TEST_CASE("parse errors carry positions and types are checked") {
    CHECK_THROWS_WITH_AS(parse_expression("size > 'foo'"), doctest::Contains("type mismatch"),
                         ParseError);
    CHECK_THROWS_AS(parse_expression("size >"), ParseError);
    CHECK_THROWS_AS(parse_expression("bogus == 3"), ParseError);
    CHECK_THROWS_AS(parse_expression("(size > 1"), ParseError);
    CHECK_THROWS_AS(parse_expression("owner < 'a'"), ParseError);
    CHECK_THROWS_AS(parse_expression("ost_index > 3"), ParseError);
    CHECK_THROWS_AS(parse_expression("last_access > 30"), ParseError);
    CHECK_THROWS_AS(parse_expression("type == bananas"), ParseError);
    CHECK_THROWS_AS(parse_expression(""), ParseError);

    try {
        parse_expression("size >\n 'foo'");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).rfind("2:", 0) == 0);  // error on line 2
    }
}

TEST_CASE("keywords are case-insensitive") {
    auto e = parse_expression("size > 1 AND owner == foo OR NOT type == dir");
    CHECK(e->kind == Expression::Kind::or_);
}

TEST_CASE("evaluation semantics") {
    std::int64_t now = 1700000000;
    auto paper = parse_expression("(size > 1GB or owner == 'foo') and path == /my/fs/*.tar");

    EntryRecord e = file_entry(2ull << 30, "bar");
    CHECK(evaluate(*paper, e, now, "/my/fs/x.tar"));
    CHECK(!evaluate(*paper, e, now, "/my/fs/sub/x.tar"));  // glob does not cross '/'
    e.size = 10;
    CHECK(!evaluate(*paper, e, now, "/my/fs/x.tar"));
    e.owner = "foo";
    CHECK(evaluate(*paper, e, now, "/my/fs/x.tar"));

    SUBCASE("age comparisons") {
        auto old = parse_expression("last_access > 30d");
        EntryRecord f = file_entry(1, "a");
        f.atime = now - 31 * 86400;
        CHECK(evaluate(*old, f, now, "/f"));
        f.atime = now - 86400;
        CHECK(!evaluate(*old, f, now, "/f"));
        auto modded = parse_expression("last_mod <= 1h");
        f.mtime = now - 3600;
        CHECK(evaluate(*modded, f, now, "/f"));
    }

    SUBCASE("ost membership") {
        EntryRecord f = file_entry(1, "a");
        f.ost_set = {1, 3};
        auto on2 = parse_expression("ost_index == 2");
        auto not2 = parse_expression("ost_index != 2");
        CHECK(!evaluate(*on2, f, now, "/f"));
        CHECK(evaluate(*not2, f, now, "/f"));
        auto on3 = parse_expression("ost_index == 3");
        CHECK(evaluate(*on3, f, now, "/f"));
    }

    SUBCASE("depth counts components minus one") {
        EntryRecord f = file_entry(1, "a");
        auto d = parse_expression("depth == 2");
        CHECK(evaluate(*d, f, now, "/a/b/c"));
        CHECK(!evaluate(*d, f, now, "/a/b"));
    }

    SUBCASE("xattr is always false when absent") {
        EntryRecord f = file_entry(1, "a");
        auto x_eq = parse_expression("xattr.user.project == hydra");
        auto x_ne = parse_expression("xattr.user.project != hydra");
        CHECK(!evaluate(*x_eq, f, now, "/f"));
        CHECK(!evaluate(*x_ne, f, now, "/f"));
    }

    SUBCASE("short-circuit is observable through counters") {
        auto e2 = parse_expression("size == 1 or size == 2 or size == 3");
        EntryRecord f = file_entry(1, "a");
        EvalCounters c;
        evaluate(*e2, f, now, "/f", &c);
        CHECK(c.compares == 1);
        f.size = 3;
        c = {};
        evaluate(*e2, f, now, "/f", &c);
        CHECK(c.compares == 3);
        auto e3 = parse_expression("size == 9 and owner == a");
        c = {};
        evaluate(*e3, f, now, "/f", &c);
        CHECK(c.compares == 1);
    }
}

namespace {

// random expression generator for round-trip and agreement properties
ExprPtr random_expr(std::mt19937_64& rng, int depth) {
    auto mk = std::make_shared<Expression>;
    if (depth <= 0 || rng() % 3 == 0) {
        static const char* attrs[] = {"size", "owner", "type", "name",
                                      "dircount", "hsm_state", "ost_index", "path"};
        std::string attr = attrs[rng() % 8];
        std::string op;
        std::string value;
        if (attr == "size" || attr == "dircount") {
            const char* ops[] = {"==", "!=", "<", "<=", ">", ">="};
            op = ops[rng() % 6];
            value = std::to_string(rng() % 4096);
            if (attr == "size" && rng() % 3 == 0) value = std::to_string(rng() % 8) + "MB";
        } else if (attr == "ost_index") {
            op = rng() % 2 ? "==" : "!=";
            value = std::to_string(rng() % 8);
        } else if (attr == "type") {
            op = rng() % 2 ? "==" : "!=";
            const char* types[] = {"file", "dir", "symlink"};
            value = types[rng() % 3];
        } else if (attr == "hsm_state") {
            op = rng() % 2 ? "==" : "!=";
            const char* states[] = {"none", "archived", "released", "dirty"};
            value = states[rng() % 4];
        } else if (attr == "path") {
            op = "==";
            const char* globs[] = {"/d*/*", "/*", "/d1/f?", "'/d1/f1'"};
            value = globs[rng() % 4];
        } else {
            op = rng() % 2 ? "==" : "!=";
            const char* names[] = {"alice", "bob", "'f 1'", "f*"};
            value = names[rng() % 4];
        }
        return parse_expression(attr + " " + op + " " + value);
    }
    int kind = static_cast<int>(rng() % 3);
    if (kind == 0) {
        auto e = mk();
        e->kind = Expression::Kind::not_;
        e->children.push_back(random_expr(rng, depth - 1));
        return e;
    }
    auto e = mk();
    e->kind = kind == 1 ? Expression::Kind::and_ : Expression::Kind::or_;
    int n = 2 + static_cast<int>(rng() % 2);
    for (int i = 0; i < n; i++) e->children.push_back(random_expr(rng, depth - 1));
    return e;
}

}  // namespace

TEST_CASE("print/parse round trip on random expressions") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 1000; i++) {
        ExprPtr e = random_expr(rng, 3);
        std::string printed = print_expression(*e);
        ExprPtr reparsed = parse_expression(printed);
        CHECK(expr_equal(*e, *reparsed));
        CHECK(print_expression(*reparsed) == printed);
    }
}

TEST_CASE("to_query flags xattr comparisons") {
    auto e = parse_expression("size > 1 and xattr.user.tag == x");
    auto q = to_query(e);
    CHECK(q.filter == e);
    REQUIRE(q.flagged.size() == 1);
    CHECK(q.flagged[0] == "user.tag");
    CHECK(!uses_only_stored_attrs(*e));
    CHECK(uses_only_stored_attrs(*parse_expression("size > 1")));
}

TEST_CASE("config parsing") {
    const std::vector<std::string> actions = {"archive", "release", "delete", "rmdir", "log",
                                              "shell"};
    const char* text = R"(
# tiering setup
fileclass big_tars {
    definition { size > 1GB and path == /data/*.tar }
}

policy cleanup {
    scope { type == file }
    rule old_first {
        target_fileclass big_tars;
        condition { last_access > 30d }
        action release;
    }
    rule fallback {
        condition { size > 16TB }
        action shell(cmd='echo {fid}', tag=x);
    }
    ignore { owner == root }
    trigger ost_usage { high 80%; low 70%; target ost 0; }
    trigger user_volume { high 2TB; low 1TB; target user bob; }
}

alert crowded {
    condition { dircount > 10000 }
    sink /tmp/alerts.log;
}
)";
    PolicyConfig cfg = parse_config(text, actions);
    CHECK(cfg.fileclasses.count("big_tars") == 1);
    REQUIRE(cfg.policies.size() == 1);
    const PolicySpec& p = cfg.policies[0];
    CHECK(p.name == "cleanup");
    REQUIRE(p.rules.size() == 2);
    CHECK(p.rules[0].target_fileclass == "big_tars");
    CHECK(p.rules[0].action == "release");
    CHECK(p.rules[1].params.at("cmd") == "echo {fid}");
    CHECK(p.rules[1].params.at("tag") == "x");
    REQUIRE(p.ignores.size() == 1);
    REQUIRE(p.triggers.size() == 2);
    CHECK(p.triggers[0].kind == TriggerKind::ost_usage);
    CHECK(p.triggers[0].high == 80.0);
    CHECK(p.triggers[0].low == 70.0);
    CHECK(p.triggers[0].target_ost == 0);
    CHECK(p.triggers[1].kind == TriggerKind::user_volume);
    CHECK(p.triggers[1].percent == false);
    CHECK(p.triggers[1].high == doctest::Approx(2.0 * (1ull << 40)));
    REQUIRE(cfg.alerts.size() == 1);
    CHECK(cfg.alerts[0].sink == "/tmp/alerts.log");

    SUBCASE("dangling fileclass reference") {
        const char* bad = R"(
policy p { scope { size >= 0 }
  rule r { target_fileclass nosuch; condition { size > 1 } action log; } }
)";
        CHECK_THROWS_WITH_AS(parse_config(bad, actions), doctest::Contains("dangling"),
                             ParseError);
    }

    SUBCASE("duplicate policy name") {
        const char* bad = R"(
policy x { scope { size >= 0 } rule r { condition { size > 1 } action log; } }
policy x { scope { size >= 0 } rule r { condition { size > 1 } action log; } }
)";
        CHECK_THROWS_WITH_AS(parse_config(bad, actions), doctest::Contains("duplicate"),
                             ParseError);
    }

    SUBCASE("unknown action") {
        const char* bad = "policy p { scope { size >= 0 } rule r { condition { size > 1 } action vaporize; } }";
        CHECK_THROWS_WITH_AS(parse_config(bad, actions), doctest::Contains("unknown action"),
                             ParseError);
    }

    SUBCASE("two default rules refused") {
        const char* bad = R"(
policy p { scope { size >= 0 }
  rule a { action log; }
  rule b { action log; } }
)";
        CHECK_THROWS_WITH_AS(parse_config(bad, actions),
                             doctest::Contains("more than one default"), ParseError);
    }

    SUBCASE("trigger threshold ordering") {
        const char* bad = "policy p { scope { size >= 0 } rule r { condition { size > 1 } action log; } trigger ost_usage { high 70%; low 80%; } }";
        CHECK_THROWS_AS(parse_config(bad, actions), ParseError);
    }
}
