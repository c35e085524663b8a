#include "metahood/policyspec.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cctype>
#include <set>

namespace metahood {

namespace {

// ---------------------------------------------------------------------------
// Lexer shared by the expression and config parsers.

enum class Tok { word, quoted, op, lparen, rparen, lbrace, rbrace, semi, comma, eq_sign, end };

struct Token {
    Tok kind = Tok::end;
    std::string text;
    int line = 1;
    int col = 1;
};

class Lexer {
public:
    Lexer(std::string_view text, int line_offset, int col_offset, bool config_mode)
        : text_(text), line_(1 + line_offset), col_(1 + col_offset), config_(config_mode) {}

    Token next() {
        skip_ws_and_comments();
        Token t;
        t.line = line_;
        t.col = col_;
        if (pos_ >= text_.size()) {
            t.kind = Tok::end;
            return t;
        }
        char c = text_[pos_];
        if (c == '(') { t.kind = Tok::lparen; t.text = "("; advance(); return t; }
        if (c == ')') { t.kind = Tok::rparen; t.text = ")"; advance(); return t; }
        if (config_) {
            if (c == '{') { t.kind = Tok::lbrace; t.text = "{"; advance(); return t; }
            if (c == '}') { t.kind = Tok::rbrace; t.text = "}"; advance(); return t; }
            if (c == ';') { t.kind = Tok::semi; t.text = ";"; advance(); return t; }
            if (c == ',') { t.kind = Tok::comma; t.text = ","; advance(); return t; }
        }
        if (c == '\'') {
            advance();
            std::string s;
            while (pos_ < text_.size() && text_[pos_] != '\'') {
                s += text_[pos_];
                advance();
            }
            if (pos_ >= text_.size())
                throw ParseError(position(t) + ": unterminated string literal");
            advance();  // closing quote
            t.kind = Tok::quoted;
            t.text = std::move(s);
            return t;
        }
        if (c == '=' || c == '!' || c == '<' || c == '>') {
            std::string op(1, c);
            advance();
            if (pos_ < text_.size() && text_[pos_] == '=') {
                op += '=';
                advance();
            }
            if (op == "=" && config_) { t.kind = Tok::eq_sign; t.text = "="; return t; }
            if (op == "=" || op == "!")
                throw ParseError(position(t) + ": bad operator '" + op + "'");
            t.kind = Tok::op;
            t.text = std::move(op);
            return t;
        }
        std::string w;
        while (pos_ < text_.size() && !is_word_break(text_[pos_])) {
            w += text_[pos_];
            advance();
        }
        if (w.empty())
            throw ParseError(position(t) + ": unexpected character '" + std::string(1, c) + "'");
        t.kind = Tok::word;
        t.text = std::move(w);
        return t;
    }

    static std::string position(const Token& t) {
        return std::to_string(t.line) + ":" + std::to_string(t.col);
    }

private:
    bool is_word_break(char c) const {
        if (std::isspace(static_cast<unsigned char>(c))) return true;
        if (c == '(' || c == ')' || c == '\'' || c == '=' || c == '!' || c == '<' || c == '>')
            return true;
        if (config_ && (c == '{' || c == '}' || c == ';' || c == ',')) return true;
        return false;
    }

    void skip_ws_and_comments() {
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (c == '#') {
                while (pos_ < text_.size() && text_[pos_] != '\n') advance();
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                advance();
            } else {
                break;
            }
        }
    }

    void advance() {
        if (text_[pos_] == '\n') {
            line_++;
            col_ = 1;
        } else {
            col_++;
        }
        pos_++;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_;
    int col_;
    bool config_;
};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

// ---------------------------------------------------------------------------
// Expression parser

const std::map<std::string, Attr, std::less<>> kAttrNames = {
    {"size", Attr::size},       {"type", Attr::type},
    {"name", Attr::name},       {"path", Attr::path},
    {"owner", Attr::owner},     {"group", Attr::group},
    {"last_access", Attr::last_access}, {"last_mod", Attr::last_mod},
    {"depth", Attr::depth},     {"dircount", Attr::dircount},
    {"ost_index", Attr::ost_index},     {"pool", Attr::pool},
    {"hsm_state", Attr::hsm_state},
};

CmpOp parse_op(const Token& t) {
    if (t.text == "==") return CmpOp::eq;
    if (t.text == "!=") return CmpOp::ne;
    if (t.text == "<") return CmpOp::lt;
    if (t.text == "<=") return CmpOp::le;
    if (t.text == ">") return CmpOp::gt;
    if (t.text == ">=") return CmpOp::ge;
    throw ParseError(Lexer::position(t) + ": expected comparison operator, got '" + t.text + "'");
}

bool is_glob(std::string_view s) {
    return s.find('*') != std::string_view::npos || s.find('?') != std::string_view::npos;
}

Value classify_value(const Token& t) {
    Value v;
    if (t.kind == Tok::quoted) {
        v.kind = ValueKind::string;
        v.text = t.text;
        return v;
    }
    const std::string& w = t.text;
    if (!w.empty() && std::isdigit(static_cast<unsigned char>(w[0]))) {
        bool all_digits = std::all_of(w.begin(), w.end(), [](unsigned char c) {
            return std::isdigit(c);
        });
        if (all_digits) {
            v.kind = ValueKind::integer;
            v.num = parse_size(w);  // bare integer
            return v;
        }
        try {
            v.num = parse_size(w);
            v.kind = ValueKind::size_bytes;
            return v;
        } catch (const ParseError&) {
        }
        try {
            v.num = parse_duration(w);
            v.kind = ValueKind::duration;
            return v;
        } catch (const ParseError&) {
        }
    }
    v.kind = is_glob(w) ? ValueKind::glob : ValueKind::string;
    v.text = w;
    return v;
}

class ExprParser {
public:
    ExprParser(std::string_view text, int line_off, int col_off)
        : lexer_(text, line_off, col_off, /*config=*/false) {
        cur_ = lexer_.next();
    }

    ExprPtr parse() {
        ExprPtr e = parse_or();
        if (cur_.kind != Tok::end)
            throw ParseError(Lexer::position(cur_) + ": expected 'and', 'or' or end of expression, got '" +
                             cur_.text + "'");
        return e;
    }

private:
    bool at_keyword(std::string_view kw) const {
        return cur_.kind == Tok::word && lower(cur_.text) == kw;
    }

    void bump() { cur_ = lexer_.next(); }

    ExprPtr parse_or() {
        std::vector<ExprPtr> parts{parse_and()};
        while (at_keyword("or")) {
            bump();
            parts.push_back(parse_and());
        }
        if (parts.size() == 1) return parts[0];
        auto e = std::make_shared<Expression>();
        e->kind = Expression::Kind::or_;
        e->children = std::move(parts);
        return e;
    }

    ExprPtr parse_and() {
        std::vector<ExprPtr> parts{parse_not()};
        while (at_keyword("and")) {
            bump();
            parts.push_back(parse_not());
        }
        if (parts.size() == 1) return parts[0];
        auto e = std::make_shared<Expression>();
        e->kind = Expression::Kind::and_;
        e->children = std::move(parts);
        return e;
    }

    ExprPtr parse_not() {
        if (at_keyword("not")) {
            bump();
            auto e = std::make_shared<Expression>();
            e->kind = Expression::Kind::not_;
            e->children.push_back(parse_not());
            return e;
        }
        if (cur_.kind == Tok::lparen) {
            bump();
            ExprPtr inner = parse_or();
            if (cur_.kind != Tok::rparen)
                throw ParseError(Lexer::position(cur_) + ": expected ')', got '" + cur_.text + "'");
            bump();
            return inner;
        }
        return parse_compare();
    }

    ExprPtr parse_compare() {
        if (cur_.kind != Tok::word)
            throw ParseError(Lexer::position(cur_) +
                             ": expected attribute, 'not' or '(', got '" + cur_.text + "'");
        Token attr_tok = cur_;
        std::string attr_name = lower(cur_.text);
        bump();

        auto e = std::make_shared<Expression>();
        e->kind = Expression::Kind::compare;
        if (attr_name.rfind("xattr.", 0) == 0) {
            e->attr = Attr::xattr;
            e->xattr_key = attr_name.substr(6);
            if (e->xattr_key.empty())
                throw ParseError(Lexer::position(attr_tok) + ": empty xattr key");
        } else {
            auto it = kAttrNames.find(attr_name);
            if (it == kAttrNames.end())
                throw ParseError(Lexer::position(attr_tok) + ": unknown attribute '" +
                                 attr_tok.text + "'");
            e->attr = it->second;
        }

        if (cur_.kind != Tok::op)
            throw ParseError(Lexer::position(cur_) + ": expected comparison operator, got '" +
                             cur_.text + "'");
        Token op_tok = cur_;
        e->op = parse_op(cur_);
        bump();

        if (cur_.kind != Tok::word && cur_.kind != Tok::quoted)
            throw ParseError(Lexer::position(cur_) + ": expected value, got '" + cur_.text + "'");
        Token val_tok = cur_;
        e->value = classify_value(cur_);
        bump();

        type_check(*e, attr_tok, op_tok, val_tok);
        return e;
    }

    static void type_check(const Expression& e, const Token& attr_tok, const Token& op_tok,
                           const Token& val_tok) {
        auto fail = [&](const std::string& why) {
            throw ParseError(Lexer::position(val_tok) + ": type mismatch: " + why);
        };
        bool order_op = e.op != CmpOp::eq && e.op != CmpOp::ne;
        switch (e.attr) {
            case Attr::size:
                if (e.value.kind != ValueKind::size_bytes && e.value.kind != ValueKind::integer)
                    fail("size compares against a byte size or integer");
                break;
            case Attr::last_access:
            case Attr::last_mod:
                if (e.value.kind != ValueKind::duration)
                    fail(std::string(to_string(e.attr)) + " compares against a duration");
                break;
            case Attr::depth:
            case Attr::dircount:
                if (e.value.kind != ValueKind::integer)
                    fail(std::string(to_string(e.attr)) + " compares against an integer");
                break;
            case Attr::ost_index:
                if (e.value.kind != ValueKind::integer)
                    fail("ost_index compares against an integer");
                if (order_op)
                    throw ParseError(Lexer::position(op_tok) +
                                     ": ost_index supports only == and != (set membership)");
                break;
            case Attr::type:
            case Attr::hsm_state:
            case Attr::name:
            case Attr::path:
            case Attr::owner:
            case Attr::group:
            case Attr::pool:
            case Attr::xattr:
                if (e.value.kind != ValueKind::string && e.value.kind != ValueKind::glob)
                    fail(std::string(attr_tok.text) + " compares against a string or glob");
                if (order_op)
                    throw ParseError(Lexer::position(op_tok) + ": string attribute '" +
                                     attr_tok.text + "' supports only == and !=");
                if (e.attr == Attr::type && e.value.kind == ValueKind::string)
                    parse_entry_type(e.value.text);  // throws on unknown tag
                if (e.attr == Attr::hsm_state && e.value.kind == ValueKind::string)
                    parse_hsm_state(e.value.text);
                break;
        }
    }

    Lexer lexer_;
    Token cur_;
};

std::string print_value(const Value& v) {
    switch (v.kind) {
        case ValueKind::size_bytes: return format_size(v.num);
        case ValueKind::duration: return format_duration(v.num);
        case ValueKind::integer: return std::to_string(v.num);
        case ValueKind::string: return "'" + v.text + "'";
        case ValueKind::glob: return v.text;
    }
    return "";
}

int path_depth(std::string_view path) {
    // Number of '/'-separated components minus one; "/" has no components.
    int components = 0;
    std::size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') i++;
        if (i < path.size()) {
            components++;
            while (i < path.size() && path[i] != '/') i++;
        }
    }
    return components - 1;
}

bool glob_match(std::string_view pattern, std::string_view str) {
    // fnmatch-style, '*' never crosses '/': path globs stay component-wise.
    return ::fnmatch(std::string(pattern).c_str(), std::string(str).c_str(), FNM_PATHNAME) == 0;
}

bool compare_numeric(std::int64_t lhs, CmpOp op, std::int64_t rhs) {
    switch (op) {
        case CmpOp::eq: return lhs == rhs;
        case CmpOp::ne: return lhs != rhs;
        case CmpOp::lt: return lhs < rhs;
        case CmpOp::le: return lhs <= rhs;
        case CmpOp::gt: return lhs > rhs;
        case CmpOp::ge: return lhs >= rhs;
    }
    return false;
}

bool compare_string(std::string_view lhs, CmpOp op, const Value& v) {
    bool match = v.kind == ValueKind::glob ? glob_match(v.text, lhs) : lhs == v.text;
    return op == CmpOp::eq ? match : !match;
}

bool eval_compare(const Expression& e, const EntryRecord& entry, std::int64_t now,
                  std::string_view path) {
    switch (e.attr) {
        case Attr::size: {
            // Unsigned compare: sizes and size values never go negative.
            std::uint64_t rhs = e.value.num;
            switch (e.op) {
                case CmpOp::eq: return entry.size == rhs;
                case CmpOp::ne: return entry.size != rhs;
                case CmpOp::lt: return entry.size < rhs;
                case CmpOp::le: return entry.size <= rhs;
                case CmpOp::gt: return entry.size > rhs;
                case CmpOp::ge: return entry.size >= rhs;
            }
            return false;
        }
        case Attr::last_access:
            return compare_numeric(now - entry.atime, e.op, static_cast<std::int64_t>(e.value.num));
        case Attr::last_mod:
            return compare_numeric(now - entry.mtime, e.op, static_cast<std::int64_t>(e.value.num));
        case Attr::depth:
            return compare_numeric(path_depth(path), e.op, static_cast<std::int64_t>(e.value.num));
        case Attr::dircount:
            return compare_numeric(static_cast<std::int64_t>(entry.dircount), e.op,
                                   static_cast<std::int64_t>(e.value.num));
        case Attr::ost_index: {
            bool member = std::find(entry.ost_set.begin(), entry.ost_set.end(),
                                    static_cast<std::uint32_t>(e.value.num)) != entry.ost_set.end();
            return e.op == CmpOp::eq ? member : !member;
        }
        case Attr::type: return compare_string(to_string(entry.etype), e.op, e.value);
        case Attr::hsm_state: return compare_string(to_string(entry.hsm), e.op, e.value);
        case Attr::name: return compare_string(entry.name, e.op, e.value);
        case Attr::path: return compare_string(path, e.op, e.value);
        case Attr::owner: return compare_string(entry.owner, e.op, e.value);
        case Attr::group: return compare_string(entry.group, e.op, e.value);
        case Attr::pool: return compare_string(entry.pool, e.op, e.value);
        case Attr::xattr: return false;  // xattrs are not stored; absent means false
    }
    return false;
}

}  // namespace

std::string_view to_string(Attr a) {
    switch (a) {
        case Attr::size: return "size";
        case Attr::type: return "type";
        case Attr::name: return "name";
        case Attr::path: return "path";
        case Attr::owner: return "owner";
        case Attr::group: return "group";
        case Attr::last_access: return "last_access";
        case Attr::last_mod: return "last_mod";
        case Attr::depth: return "depth";
        case Attr::dircount: return "dircount";
        case Attr::ost_index: return "ost_index";
        case Attr::pool: return "pool";
        case Attr::hsm_state: return "hsm_state";
        case Attr::xattr: return "xattr";
    }
    return "size";
}

std::string_view to_string(CmpOp op) {
    switch (op) {
        case CmpOp::eq: return "==";
        case CmpOp::ne: return "!=";
        case CmpOp::lt: return "<";
        case CmpOp::le: return "<=";
        case CmpOp::gt: return ">";
        case CmpOp::ge: return ">=";
    }
    return "==";
}

bool expr_equal(const Expression& a, const Expression& b) {
    if (a.kind != b.kind) return false;
    if (a.kind == Expression::Kind::compare)
        return a.attr == b.attr && a.xattr_key == b.xattr_key && a.op == b.op && a.value == b.value;
    if (a.children.size() != b.children.size()) return false;
    for (std::size_t i = 0; i < a.children.size(); i++)
        if (!expr_equal(*a.children[i], *b.children[i])) return false;
    return true;
}

std::string print_expression(const Expression& e) {
    switch (e.kind) {
        case Expression::Kind::compare: {
            std::string attr_name = e.attr == Attr::xattr ? "xattr." + e.xattr_key
                                                          : std::string(to_string(e.attr));
            return attr_name + " " + std::string(to_string(e.op)) + " " + print_value(e.value);
        }
        case Expression::Kind::not_:
            return "not (" + print_expression(*e.children[0]) + ")";
        case Expression::Kind::and_:
        case Expression::Kind::or_: {
            const char* sep = e.kind == Expression::Kind::and_ ? " and " : " or ";
            std::string out;
            for (std::size_t i = 0; i < e.children.size(); i++) {
                if (i) out += sep;
                out += "(" + print_expression(*e.children[i]) + ")";
            }
            return out;
        }
    }
    return "";
}

ExprPtr parse_expression(std::string_view text, int line_offset, int col_offset) {
    return ExprParser(text, line_offset, col_offset).parse();
}

bool evaluate(const Expression& e, const EntryRecord& entry, std::int64_t now,
              std::string_view path, EvalCounters* counters) {
    switch (e.kind) {
        case Expression::Kind::compare:
            if (counters) counters->compares++;
            return eval_compare(e, entry, now, path);
        case Expression::Kind::not_:
            return !evaluate(*e.children[0], entry, now, path, counters);
        case Expression::Kind::and_:
            for (const auto& c : e.children)
                if (!evaluate(*c, entry, now, path, counters)) return false;
            return true;
        case Expression::Kind::or_:
            for (const auto& c : e.children)
                if (evaluate(*c, entry, now, path, counters)) return true;
            return false;
    }
    return false;
}

bool uses_only_stored_attrs(const Expression& e) {
    if (e.kind == Expression::Kind::compare) return e.attr != Attr::xattr;
    return std::all_of(e.children.begin(), e.children.end(),
                       [](const ExprPtr& c) { return uses_only_stored_attrs(*c); });
}

namespace {
void collect_xattr_keys(const Expression& e, std::set<std::string>& keys) {
    if (e.kind == Expression::Kind::compare) {
        if (e.attr == Attr::xattr) keys.insert(e.xattr_key);
        return;
    }
    for (const auto& c : e.children) collect_xattr_keys(*c, keys);
}
}  // namespace

QueryFilter to_query(ExprPtr e) {
    QueryFilter f;
    f.filter = std::move(e);
    std::set<std::string> keys;
    if (f.filter) collect_xattr_keys(*f.filter, keys);
    f.flagged.assign(keys.begin(), keys.end());
    return f;
}

// ---------------------------------------------------------------------------
// Config parser

namespace {

class ConfigParser {
public:
    ConfigParser(std::string_view text, const std::vector<std::string>& known_actions)
        : text_(text), lexer_(text, 0, 0, /*config=*/true), actions_(known_actions) {
        cur_ = lexer_.next();
    }

    PolicyConfig parse() {
        PolicyConfig cfg;
        while (cur_.kind != Tok::end) {
            expect_word("expected 'fileclass', 'policy' or 'alert'");
            std::string block = lower(cur_.text);
            if (block == "fileclass") {
                parse_fileclass(cfg);
            } else if (block == "policy") {
                parse_policy(cfg);
            } else if (block == "alert") {
                parse_alert(cfg);
            } else {
                throw ParseError(Lexer::position(cur_) + ": unknown block '" + cur_.text + "'");
            }
        }
        validate(cfg);
        return cfg;
    }

private:
    void bump() { cur_ = lexer_.next(); }

    void expect_word(const std::string& what) {
        if (cur_.kind != Tok::word)
            throw ParseError(Lexer::position(cur_) + ": " + what + ", got '" + cur_.text + "'");
    }

    void expect(Tok kind, const std::string& what) {
        if (cur_.kind != kind)
            throw ParseError(Lexer::position(cur_) + ": expected " + what + ", got '" + cur_.text + "'");
    }

    std::string take_word(const std::string& what) {
        expect_word("expected " + what);
        std::string w = cur_.text;
        bump();
        return w;
    }

    // Raw text between the braces of an expression block, with the brace-open
    // position so expression errors report file coordinates.
    ExprPtr parse_expr_block() {
        expect(Tok::lbrace, "'{'");
        // Scan the raw text (quote-aware) from the lexer's current position.
        // The lexer cannot tokenize expressions with config breaks disabled,
        // so re-lex the captured slice with the expression lexer.
        int line_off = cur_.line - 1;
        int col_off = cur_.col;  // text starts right after '{'
        std::size_t start = offset_after(cur_);
        std::size_t i = start;
        bool in_quote = false;
        while (i < text_.size()) {
            char c = text_[i];
            if (c == '\'') in_quote = !in_quote;
            else if (c == '}' && !in_quote) break;
            else if (c == '#' && !in_quote) {
                while (i < text_.size() && text_[i] != '\n') i++;
                continue;
            }
            i++;
        }
        if (i >= text_.size())
            throw ParseError(Lexer::position(cur_) + ": unterminated expression block");
        std::string_view expr_text = text_.substr(start, i - start);
        ExprPtr e = parse_expression(expr_text, line_off, col_off);
        skip_past(i + 1);
        return e;
    }

    // Recompute lexer state after manually consuming raw text up to `pos`.
    void skip_past(std::size_t pos) {
        int line = 1, col = 1;
        for (std::size_t i = 0; i < pos; i++) {
            if (text_[i] == '\n') { line++; col = 1; }
            else col++;
        }
        lexer_ = Lexer(text_.substr(pos), line - 1, col - 1, /*config=*/true);
        cur_ = lexer_.next();
    }

    std::size_t offset_after(const Token& t) const {
        // Linear re-scan to the token's line/col; config files are small.
        int line = 1, col = 1;
        for (std::size_t i = 0; i < text_.size(); i++) {
            if (line == t.line && col == t.col) return i + t.text.size();
            if (text_[i] == '\n') { line++; col = 1; }
            else col++;
        }
        return text_.size();
    }

    void parse_fileclass(PolicyConfig& cfg) {
        bump();  // 'fileclass'
        Token name_tok = cur_;
        std::string name = take_word("fileclass name");
        expect(Tok::lbrace, "'{'");
        bump();
        std::string kw = lower(take_word("'definition'"));
        if (kw != "definition")
            throw ParseError(Lexer::position(cur_) + ": expected 'definition' in fileclass");
        ExprPtr def = parse_expr_block();
        expect(Tok::rbrace, "'}'");
        bump();
        if (cfg.fileclasses.count(name))
            throw ParseError(Lexer::position(name_tok) + ": duplicate fileclass '" + name + "'");
        cfg.fileclasses[name] = std::move(def);
    }

    TriggerSpec parse_trigger() {
        TriggerSpec t;
        std::string kind = lower(take_word("trigger kind"));
        if (kind == "global_usage") t.kind = TriggerKind::global_usage;
        else if (kind == "ost_usage") t.kind = TriggerKind::ost_usage;
        else if (kind == "pool_usage") t.kind = TriggerKind::pool_usage;
        else if (kind == "user_volume") t.kind = TriggerKind::user_volume;
        else if (kind == "user_count") t.kind = TriggerKind::user_count;
        else throw ParseError(Lexer::position(cur_) + ": unknown trigger kind '" + kind + "'");
        t.percent = t.kind == TriggerKind::global_usage || t.kind == TriggerKind::ost_usage ||
                    t.kind == TriggerKind::pool_usage;
        expect(Tok::lbrace, "'{'");
        bump();
        bool saw_high = false, saw_low = false;
        while (cur_.kind != Tok::rbrace) {
            Token kw_tok = cur_;
            std::string kw = lower(take_word("trigger keyword"));
            if (kw == "high" || kw == "low") {
                std::string v = take_word("threshold value");
                double parsed;
                if (!v.empty() && v.back() == '%') {
                    if (!t.percent)
                        throw ParseError(Lexer::position(kw_tok) +
                                         ": user triggers take absolute thresholds, not percents");
                    parsed = std::stod(v.substr(0, v.size() - 1));
                } else {
                    if (t.percent)
                        throw ParseError(Lexer::position(kw_tok) +
                                         ": usage triggers take percent thresholds like '80%'");
                    parsed = static_cast<double>(parse_size(v));
                }
                (kw == "high" ? t.high : t.low) = parsed;
                (kw == "high" ? saw_high : saw_low) = true;
            } else if (kw == "target") {
                std::string target_kind = lower(take_word("target kind"));
                if (target_kind == "ost") {
                    t.target_ost = static_cast<std::uint32_t>(std::stoul(take_word("ost index")));
                } else if (target_kind == "pool") {
                    t.target_name = take_word("pool name");
                } else if (target_kind == "user") {
                    t.target_name = take_word("user name");
                } else if (target_kind == "global" || target_kind == "all") {
                    // default targets
                } else {
                    throw ParseError(Lexer::position(kw_tok) + ": unknown target '" + target_kind + "'");
                }
            } else {
                throw ParseError(Lexer::position(kw_tok) + ": unknown trigger keyword '" + kw + "'");
            }
            expect(Tok::semi, "';'");
            bump();
        }
        bump();  // '}'
        if (!saw_high || !saw_low)
            throw ParseError("trigger " + kind + " needs both high and low thresholds");
        if (!(t.low < t.high))
            throw ParseError("trigger " + kind + ": low must be strictly below high");
        return t;
    }

    RuleSpec parse_rule() {
        RuleSpec r;
        r.name = take_word("rule name");
        expect(Tok::lbrace, "'{'");
        bump();
        while (cur_.kind != Tok::rbrace) {
            Token kw_tok = cur_;
            std::string kw = lower(take_word("rule keyword"));
            if (kw == "target_fileclass") {
                r.target_fileclass = take_word("fileclass name");
                expect(Tok::semi, "';'");
                bump();
            } else if (kw == "condition") {
                r.condition = parse_expr_block();
            } else if (kw == "action") {
                r.action = take_word("action name");
                if (cur_.kind == Tok::lparen) {
                    bump();
                    while (cur_.kind != Tok::rparen) {
                        std::string key = take_word("parameter name");
                        expect(Tok::eq_sign, "'='");
                        bump();
                        if (cur_.kind != Tok::word && cur_.kind != Tok::quoted)
                            throw ParseError(Lexer::position(cur_) + ": expected parameter value");
                        r.params[key] = cur_.text;
                        bump();
                        if (cur_.kind == Tok::comma) bump();
                    }
                    bump();  // ')'
                }
                expect(Tok::semi, "';'");
                bump();
            } else {
                throw ParseError(Lexer::position(kw_tok) + ": unknown rule keyword '" + kw + "'");
            }
        }
        bump();  // '}'
        if (r.action.empty())
            throw ParseError("rule '" + r.name + "' has no action");
        return r;
    }

    void parse_policy(PolicyConfig& cfg) {
        bump();  // 'policy'
        Token name_tok = cur_;
        PolicySpec p;
        p.name = take_word("policy name");
        expect(Tok::lbrace, "'{'");
        bump();
        while (cur_.kind != Tok::rbrace) {
            Token kw_tok = cur_;
            std::string kw = lower(take_word("policy keyword"));
            if (kw == "scope") {
                p.scope = parse_expr_block();
            } else if (kw == "rule") {
                p.rules.push_back(parse_rule());
            } else if (kw == "ignore") {
                p.ignores.push_back(parse_expr_block());
            } else if (kw == "trigger") {
                p.triggers.push_back(parse_trigger());
            } else {
                throw ParseError(Lexer::position(kw_tok) + ": unknown policy keyword '" + kw + "'");
            }
        }
        bump();  // '}'
        for (const auto& existing : cfg.policies)
            if (existing.name == p.name)
                throw ParseError(Lexer::position(name_tok) + ": duplicate policy '" + p.name + "'");
        if (!p.scope)
            throw ParseError("policy '" + p.name + "' has no scope");
        cfg.policies.push_back(std::move(p));
    }

    void parse_alert(PolicyConfig& cfg) {
        bump();  // 'alert'
        Token name_tok = cur_;
        AlertSpec a;
        a.name = take_word("alert name");
        expect(Tok::lbrace, "'{'");
        bump();
        while (cur_.kind != Tok::rbrace) {
            std::string kw = lower(take_word("alert keyword"));
            if (kw == "condition") {
                a.condition = parse_expr_block();
            } else if (kw == "sink") {
                a.sink = take_word("sink path");
                expect(Tok::semi, "';'");
                bump();
            } else {
                throw ParseError(Lexer::position(cur_) + ": unknown alert keyword '" + kw + "'");
            }
        }
        bump();
        for (const auto& existing : cfg.alerts)
            if (existing.name == a.name)
                throw ParseError(Lexer::position(name_tok) + ": duplicate alert '" + a.name + "'");
        if (!a.condition) throw ParseError("alert '" + a.name + "' has no condition");
        if (a.sink.empty()) throw ParseError("alert '" + a.name + "' has no sink");
        cfg.alerts.push_back(std::move(a));
    }

    void validate(const PolicyConfig& cfg) {
        for (const auto& p : cfg.policies) {
            int default_rules = 0;
            for (const auto& r : p.rules) {
                if (r.target_fileclass && !cfg.fileclasses.count(*r.target_fileclass))
                    throw ParseError("policy '" + p.name + "' rule '" + r.name +
                                     "': dangling fileclass reference '" + *r.target_fileclass + "'");
                if (!r.condition) default_rules++;
                if (!actions_.empty() &&
                    std::find(actions_.begin(), actions_.end(), r.action) == actions_.end())
                    throw ParseError("policy '" + p.name + "' rule '" + r.name +
                                     "': unknown action '" + r.action + "'");
            }
            if (default_rules > 1)
                throw ParseError("policy '" + p.name + "' has more than one default rule");
        }
    }

    std::string_view text_;
    Lexer lexer_;
    Token cur_;
    const std::vector<std::string>& actions_;
};

}  // namespace

std::string_view to_string(TriggerKind k) {
    switch (k) {
        case TriggerKind::global_usage: return "global_usage";
        case TriggerKind::ost_usage: return "ost_usage";
        case TriggerKind::pool_usage: return "pool_usage";
        case TriggerKind::user_volume: return "user_volume";
        case TriggerKind::user_count: return "user_count";
    }
    return "global_usage";
}

const PolicySpec* PolicyConfig::find_policy(std::string_view name) const {
    for (const auto& p : policies)
        if (p.name == name) return &p;
    return nullptr;
}

PolicyConfig parse_config(std::string_view text, const std::vector<std::string>& known_actions) {
    return ConfigParser(text, known_actions).parse();
}

}  // namespace metahood
