#include "metahood/core.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>

namespace metahood {

namespace {

std::uint64_t parse_hex_field(std::string_view field, std::string_view whole) {
    if (field.size() < 3 || field[0] != '0' || field[1] != 'x')
        throw ParseError("bad entry id '" + std::string(whole) + "': field '" +
                         std::string(field) + "' is not 0x-prefixed hex");
    std::uint64_t value = 0;
    auto digits = field.substr(2);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value, 16);
    if (ec != std::errc{} || ptr != digits.data() + digits.size())
        throw ParseError("bad entry id '" + std::string(whole) + "': field '" +
                         std::string(field) + "' is not valid hex");
    return value;
}

std::uint64_t parse_uint(std::string_view text, std::string_view what) {
    if (text.empty())
        throw ParseError("empty " + std::string(what));
    if (text[0] == '-')
        throw ParseError("negative " + std::string(what) + " '" + std::string(text) + "'");
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec == std::errc::result_out_of_range)
        throw ParseError(std::string(what) + " '" + std::string(text) + "' overflows");
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ParseError("bad " + std::string(what) + " '" + std::string(text) + "'");
    return value;
}

}  // namespace

std::string format_entry_id(const EntryId& id) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%llx:0x%x:0x%x",
                  static_cast<unsigned long long>(id.seq), id.oid, id.ver);
    return buf;
}

EntryId parse_entry_id(std::string_view text) {
    auto c1 = text.find(':');
    auto c2 = c1 == std::string_view::npos ? c1 : text.find(':', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos ||
        text.find(':', c2 + 1) != std::string_view::npos)
        throw ParseError("bad entry id '" + std::string(text) +
                         "': expected 0x<seq>:0x<oid>:0x<ver>");
    EntryId id;
    id.seq = parse_hex_field(text.substr(0, c1), text);
    std::uint64_t oid = parse_hex_field(text.substr(c1 + 1, c2 - c1 - 1), text);
    std::uint64_t ver = parse_hex_field(text.substr(c2 + 1), text);
    if (oid > 0xFFFFFFFFull || ver > 0xFFFFFFFFull)
        throw ParseError("bad entry id '" + std::string(text) + "': oid/ver exceed 32 bits");
    id.oid = static_cast<std::uint32_t>(oid);
    id.ver = static_cast<std::uint32_t>(ver);
    return id;
}

std::string_view to_string(EntryType t) {
    switch (t) {
        case EntryType::file: return "file";
        case EntryType::dir: return "dir";
        case EntryType::symlink: return "symlink";
    }
    return "file";
}

EntryType parse_entry_type(std::string_view text) {
    if (text == "file") return EntryType::file;
    if (text == "dir") return EntryType::dir;
    if (text == "symlink") return EntryType::symlink;
    throw ParseError("unknown entry type '" + std::string(text) + "'");
}

std::string_view to_string(HsmState s) {
    switch (s) {
        case HsmState::none: return "none";
        case HsmState::hsm_new: return "new";
        case HsmState::archiving: return "archiving";
        case HsmState::archived: return "archived";
        case HsmState::dirty: return "dirty";
        case HsmState::released: return "released";
    }
    return "none";
}

HsmState parse_hsm_state(std::string_view text) {
    if (text == "none") return HsmState::none;
    if (text == "new") return HsmState::hsm_new;
    if (text == "archiving") return HsmState::archiving;
    if (text == "archived") return HsmState::archived;
    if (text == "dirty") return HsmState::dirty;
    if (text == "released") return HsmState::released;
    throw ParseError("unknown hsm state '" + std::string(text) + "'");
}

std::string_view to_string(HsmEvent e) {
    switch (e) {
        case HsmEvent::archive_start: return "archive_start";
        case HsmEvent::archive_done: return "archive_done";
        case HsmEvent::modify: return "modify";
        case HsmEvent::release: return "release";
        case HsmEvent::restore: return "restore";
        case HsmEvent::unlink: return "unlink";
    }
    return "modify";
}

std::optional<HsmState> hsm_next_state(HsmState from, HsmEvent event) {
    switch (event) {
        case HsmEvent::archive_start:
            if (from == HsmState::none || from == HsmState::hsm_new || from == HsmState::dirty)
                return HsmState::archiving;
            return std::nullopt;
        case HsmEvent::archive_done:
            if (from == HsmState::archiving) return HsmState::archived;
            return std::nullopt;
        case HsmEvent::modify:
            // A released file is implicitly restored before the write.
            if (from == HsmState::archived || from == HsmState::released)
                return HsmState::dirty;
            return std::nullopt;
        case HsmEvent::release:
            if (from == HsmState::archived) return HsmState::released;
            return std::nullopt;
        case HsmEvent::restore:
            if (from == HsmState::released) return HsmState::archived;
            return std::nullopt;
        case HsmEvent::unlink:
            return from;  // state unchanged; soft-rm bookkeeping is the caller's
    }
    return std::nullopt;
}

namespace {

struct Unit {
    const char* suffix;
    std::uint64_t factor;
};

constexpr std::array<Unit, 5> kSizeUnits{{
    {"PB", 1ull << 50}, {"TB", 1ull << 40}, {"GB", 1ull << 30}, {"MB", 1ull << 20}, {"KB", 1ull << 10},
}};

constexpr std::array<Unit, 5> kDurationUnits{{
    {"w", 604800}, {"d", 86400}, {"h", 3600}, {"m", 60}, {"s", 1},
}};

std::uint64_t parse_with_units(std::string_view text, const auto& units, std::string_view what) {
    if (text.empty()) throw ParseError("empty " + std::string(what));
    std::size_t digits = 0;
    while (digits < text.size() && std::isdigit(static_cast<unsigned char>(text[digits]))) digits++;
    if (digits == 0)
        throw ParseError("bad " + std::string(what) + " '" + std::string(text) + "': expected digits");
    std::uint64_t magnitude = parse_uint(text.substr(0, digits), what);
    std::string_view suffix = text.substr(digits);
    if (suffix.empty()) return magnitude;
    for (const auto& u : units) {
        if (suffix == u.suffix) {
            if (magnitude > UINT64_MAX / u.factor)
                throw ParseError(std::string(what) + " '" + std::string(text) + "' overflows");
            return magnitude * u.factor;
        }
    }
    throw ParseError("unknown " + std::string(what) + " suffix '" + std::string(suffix) + "'");
}

std::string format_with_units(std::uint64_t value, const auto& units) {
    for (const auto& u : units) {
        if (value >= u.factor && value % u.factor == 0)
            return std::to_string(value / u.factor) + u.suffix;
    }
    return std::to_string(value);
}

}  // namespace

std::uint64_t parse_size(std::string_view text) { return parse_with_units(text, kSizeUnits, "size"); }

std::string format_size(std::uint64_t bytes) {
    if (bytes == 0) return "0";
    return format_with_units(bytes, kSizeUnits);
}

std::string format_size_human(std::uint64_t bytes) {
    if (bytes < 1024) return std::to_string(bytes);
    for (const auto& u : kSizeUnits) {
        if (bytes >= u.factor) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f %s",
                          static_cast<double>(bytes) / static_cast<double>(u.factor), u.suffix);
            return buf;
        }
    }
    return std::to_string(bytes);
}

std::uint64_t parse_duration(std::string_view text) {
    return parse_with_units(text, kDurationUnits, "duration");
}

std::string format_duration(std::uint64_t seconds) {
    if (seconds == 0) return "0s";
    for (const auto& u : kDurationUnits) {
        if (seconds >= u.factor && seconds % u.factor == 0)
            return std::to_string(seconds / u.factor) + u.suffix;
    }
    return std::to_string(seconds) + "s";
}

int size_bucket(std::uint64_t size) {
    if (size == 0) return 0;
    // Thresholds 2^10, 2^15, ..., 2^40; bucket i+1 covers [t_{i-1}, t_i).
    for (int i = 0; i < 7; i++) {
        if (size < (1ull << (10 + 5 * i))) return i + 1;
    }
    return 8;
}

std::uint64_t size_bucket_floor(int bucket) {
    if (bucket <= 1) return 0;
    return 1ull << (10 + 5 * (bucket - 2));
}

std::string size_bucket_label(int bucket) {
    static const char* names[] = {"0", "1K", "32K", "1M", "32M", "1G", "32G", "1T"};
    if (bucket == 0) return "0";
    if (bucket == 1) return "1..1K";
    if (bucket == 8) return "1T..inf";
    return std::string(names[bucket - 1]) + ".." + names[bucket];
}

std::string encode_name(std::string_view name) {
    if (name.empty()) return "%00";
    std::string out;
    out.reserve(name.size());
    for (char c : name) {
        switch (c) {
            case ' ': out += "%20"; break;
            case '%': out += "%25"; break;
            case '\n': out += "%0A"; break;
            default: out += c;
        }
    }
    return out;
}

std::string decode_name(std::string_view text) {
    if (text == "%00") return "";
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); i++) {
        if (text[i] == '%') {
            if (i + 2 >= text.size())
                throw ParseError("truncated escape in '" + std::string(text) + "'");
            auto hex = [&](char c) -> int {
                if (c >= '0' && c <= '9') return c - '0';
                if (c >= 'a' && c <= 'f') return c - 'a' + 10;
                if (c >= 'A' && c <= 'F') return c - 'A' + 10;
                throw ParseError("bad escape in '" + std::string(text) + "'");
            };
            out += static_cast<char>(hex(text[i + 1]) * 16 + hex(text[i + 2]));
            i += 2;
        } else {
            out += text[i];
        }
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) i++;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') i++;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

namespace {

std::string format_ost_list(const std::vector<std::uint32_t>& osts) {
    if (osts.empty()) return "-";
    std::string out;
    for (std::size_t i = 0; i < osts.size(); i++) {
        if (i) out += ',';
        out += std::to_string(osts[i]);
    }
    return out;
}

std::vector<std::uint32_t> parse_ost_list(const std::string& text) {
    std::vector<std::uint32_t> out;
    if (text == "-") return out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        out.push_back(static_cast<std::uint32_t>(std::stoul(text.substr(pos, comma - pos))));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

std::string format_entry_line(const EntryRecord& e, bool extended) {
    char mode[8];
    std::snprintf(mode, sizeof(mode), "%04o", e.mode & 07777u);
    std::string line = "E " + format_entry_id(e.id) + " " + format_entry_id(e.parent) + " " +
                       std::string(to_string(e.etype)) + " " + encode_name(e.name) + " " +
                       std::to_string(e.size) + " " + std::to_string(e.blocks) + " " + e.owner +
                       " " + e.group + " " + mode + " " + std::to_string(e.atime) + " " +
                       std::to_string(e.mtime) + " " + std::to_string(e.ctime) + " " +
                       format_ost_list(e.ost_set) + " " + (e.pool.empty() ? "-" : e.pool) + " " +
                       std::string(to_string(e.hsm)) + " " + std::to_string(e.dircount);
    if (extended) line += " " + std::to_string(e.md_gen) + " " + std::to_string(e.dirty_mask);
    return line;
}

EntryRecord parse_entry_line(const std::string& line) {
    auto f = split_ws(line);
    if (f.size() != 17 && f.size() != 19)
        throw ParseError("bad entry line (field count " + std::to_string(f.size()) + "): " + line);
    EntryRecord e;
    e.id = parse_entry_id(f[1]);
    e.parent = parse_entry_id(f[2]);
    e.etype = parse_entry_type(f[3]);
    e.name = decode_name(f[4]);
    e.size = std::stoull(f[5]);
    e.blocks = std::stoull(f[6]);
    e.owner = f[7];
    e.group = f[8];
    e.mode = static_cast<std::uint32_t>(std::stoul(f[9], nullptr, 8));
    e.atime = std::stoll(f[10]);
    e.mtime = std::stoll(f[11]);
    e.ctime = std::stoll(f[12]);
    e.ost_set = parse_ost_list(f[13]);
    e.pool = f[14] == "-" ? "" : f[14];
    e.hsm = parse_hsm_state(f[15]);
    e.dircount = std::stoull(f[16]);
    if (f.size() == 19) {
        e.md_gen = std::stoull(f[17]);
        e.dirty_mask = static_cast<std::uint32_t>(std::stoul(f[18]));
    }
    return e;
}

std::uint64_t stable_hash(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string resolve_path(const EntryLookup& lookup, const EntryId& id) {
    std::vector<std::string> parts;
    EntryId cur = id;
    for (int hops = 0; hops < 4096; hops++) {
        auto rec = lookup(cur);
        if (!rec) {
            std::string suffix;
            for (auto it = parts.rbegin(); it != parts.rend(); ++it) suffix += "/" + *it;
            throw PathError(PathError::Kind::unresolved, suffix);
        }
        if (rec->is_root()) {
            if (parts.empty()) return "/";
            std::string path;
            for (auto it = parts.rbegin(); it != parts.rend(); ++it) path += "/" + *it;
            return path;
        }
        parts.push_back(rec->name);
        cur = rec->parent;
    }
    throw PathError(PathError::Kind::cycle, "");
}

}  // namespace metahood
