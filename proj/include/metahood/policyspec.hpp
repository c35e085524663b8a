// Condition-expression language and policy configuration format: lexer,
// parser, AST, evaluation against an EntryRecord, canonical printer.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "metahood/core.hpp"

namespace metahood {

// ---------------------------------------------------------------------------
// Expression AST

enum class Attr {
    size, type, name, path, owner, group, last_access, last_mod,
    depth, dircount, ost_index, pool, hsm_state, xattr,
};

std::string_view to_string(Attr a);

enum class CmpOp { eq, ne, lt, le, gt, ge };

std::string_view to_string(CmpOp op);

enum class ValueKind { size_bytes, duration, integer, string, glob };

struct Value {
    ValueKind kind = ValueKind::integer;
    std::uint64_t num = 0;   // size_bytes / duration / integer
    std::string text;        // string / glob

    friend bool operator==(const Value&, const Value&) = default;
};

struct Expression;
using ExprPtr = std::shared_ptr<const Expression>;

struct Expression {
    enum class Kind { and_, or_, not_, compare };

    Kind kind = Kind::compare;
    std::vector<ExprPtr> children;  // and/or: >= 2, not: exactly 1

    // compare payload
    Attr attr = Attr::size;
    std::string xattr_key;  // set when attr == Attr::xattr
    CmpOp op = CmpOp::eq;
    Value value;
};

bool expr_equal(const Expression& a, const Expression& b);

// Fully parenthesized canonical form; parse(print(parse(t))) == parse(t).
std::string print_expression(const Expression& e);

// Grammar: or := and ('or' and)* ; and := not ('and' not)* ;
//          not := 'not' not | '(' or ')' | cmp ; cmp := attr op value
// Keywords are case-insensitive; precedence not > and > or. Comparisons
// type-check here, so evaluation can never hit a type fault.
// line/col offsets shift reported positions when the text is embedded in a
// larger file (policy config blocks).
ExprPtr parse_expression(std::string_view text, int line_offset = 0, int col_offset = 0);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalCounters {
    std::uint64_t compares = 0;  // Compare nodes actually evaluated (short-circuit probe)
};

// Total function: path is resolve_path(entry), supplied by the caller; `now`
// anchors last_access / last_mod age comparisons.
bool evaluate(const Expression& e, const EntryRecord& entry, std::int64_t now,
              std::string_view path, EvalCounters* counters = nullptr);

// Expression references only attributes present in the store (everything but
// xattr.*).
bool uses_only_stored_attrs(const Expression& e);

// Identity translation into a store filter; flags the non-stored attribute
// keys the store will evaluate as false.
struct QueryFilter {
    ExprPtr filter;
    std::vector<std::string> flagged;  // xattr keys
};

QueryFilter to_query(ExprPtr e);

// ---------------------------------------------------------------------------
// Policy configuration

enum class TriggerKind { global_usage, ost_usage, pool_usage, user_volume, user_count };

std::string_view to_string(TriggerKind k);

struct TriggerSpec {
    TriggerKind kind = TriggerKind::global_usage;
    // target: ost index for ost_usage, pool name for pool_usage, user name or
    // "" (= all users) for user_*; unused for global_usage.
    std::uint32_t target_ost = 0;
    std::string target_name;
    bool percent = true;      // thresholds are percentages (usage kinds)
    double high = 0;          // percent, or absolute bytes/count
    double low = 0;
};

struct RuleSpec {
    std::string name;
    std::optional<std::string> target_fileclass;
    ExprPtr condition;  // null = default rule (matches everything)
    std::string action;
    std::map<std::string, std::string> params;
};

struct PolicySpec {
    std::string name;
    ExprPtr scope;
    std::vector<RuleSpec> rules;
    std::vector<ExprPtr> ignores;
    std::vector<TriggerSpec> triggers;
};

struct AlertSpec {
    std::string name;
    ExprPtr condition;
    std::string sink;
};

struct PolicyConfig {
    std::map<std::string, ExprPtr> fileclasses;
    std::vector<PolicySpec> policies;
    std::vector<AlertSpec> alerts;

    const PolicySpec* find_policy(std::string_view name) const;
};

// Brace-block config format; '#' comments to end of line. Fileclass
// references resolve here; action names validate against `known_actions`.
PolicyConfig parse_config(std::string_view text, const std::vector<std::string>& known_actions);

}  // namespace metahood
