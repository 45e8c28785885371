#include "foundry/shardstore.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace foundry::shardstore {

namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
    // width includes the terminating NUL.
    std::string digits(width - 1, '0');
    for (std::size_t i = width - 1; i-- > 0 && value != 0; value >>= 3) digits[i] = static_cast<char>('0' + (value & 7));
    if (value != 0) throw FormatError("tar field overflow");
    std::copy(digits.begin(), digits.end(), field);
    field[width - 1] = '\0';
}

std::uint64_t get_octal(const char* field, std::size_t width) {
    std::uint64_t v = 0;
    std::size_t i = 0;
    while (i < width && (field[i] == ' ' || field[i] == '\0')) ++i;
    for (; i < width && field[i] >= '0' && field[i] <= '7'; ++i) v = (v << 3) | static_cast<std::uint64_t>(field[i] - '0');
    for (; i < width; ++i) {
        if (field[i] != ' ' && field[i] != '\0') throw FormatError("malformed tar: bad octal field");
    }
    return v;
}

std::string c_field(const char* field, std::size_t width) {
    return std::string(field, strnlen(field, width));
}

std::uint64_t header_checksum(const char* h) {
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < kBlock; ++i) {
        bool in_chksum = i >= 148 && i < 156;
        sum += in_chksum ? static_cast<unsigned char>(' ') : static_cast<unsigned char>(h[i]);
    }
    return sum;
}

void fill_header(char* h, const std::string& name, std::size_t size) {
    std::string base = name;
    std::string prefix;
    if (base.size() > 100) {
        auto slash = name.rfind('/', 155);
        if (slash == std::string::npos || name.size() - slash - 1 > 100 || slash == 0)
            throw FormatError("tar entry name too long: " + name);
        prefix = name.substr(0, slash);
        base = name.substr(slash + 1);
    }
    std::copy(base.begin(), base.end(), h);
    put_octal(h + 100, 8, 0644);
    put_octal(h + 108, 8, 0);
    put_octal(h + 116, 8, 0);
    put_octal(h + 124, 12, size);
    put_octal(h + 136, 12, 0);
    h[156] = '0';
    std::copy_n("ustar", 6, h + 257);
    h[263] = '0';
    h[264] = '0';
    std::copy(prefix.begin(), prefix.end(), h + 345);
    // Checksum: six octal digits, NUL, space.
    std::uint64_t sum = header_checksum(h);
    put_octal(h + 148, 7, sum);
    h[155] = ' ';
}

}  // namespace

std::string write_tar(std::span<const TarEntry> entries) {
    std::string out;
    for (const auto& e : entries) {
        if (e.name.empty()) throw FormatError("tar entry with empty name");
        std::size_t at = out.size();
        out.resize(at + kBlock, '\0');
        fill_header(out.data() + at, e.name, e.data.size());
        out += e.data;
        out.resize(out.size() + (kBlock - e.data.size() % kBlock) % kBlock, '\0');
    }
    out.resize(out.size() + 2 * kBlock, '\0');
    return out;
}

std::vector<TarEntry> read_tar(std::string_view bytes) {
    std::vector<TarEntry> out;
    std::size_t pos = 0;
    while (true) {
        if (pos + kBlock > bytes.size()) {
            if (pos == bytes.size() && pos > 0) break;  // no end-of-archive blocks
            throw FormatError("malformed tar: truncated header at offset " + std::to_string(pos));
        }
        const char* h = bytes.data() + pos;
        if (std::all_of(h, h + kBlock, [](char c) { return c == '\0'; })) break;
        std::uint64_t stored = get_octal(h + 148, 8);
        if (stored != header_checksum(h))
            throw FormatError("malformed tar: checksum mismatch at offset " + std::to_string(pos));
        std::uint64_t size = get_octal(h + 124, 12);
        std::string name = c_field(h, 100);
        if (std::string_view(h + 257, 5) == "ustar") {
            std::string prefix = c_field(h + 345, 155);
            if (!prefix.empty()) name = prefix + "/" + name;
        }
        char type = h[156];
        pos += kBlock;
        if (pos + size > bytes.size())
            throw FormatError("malformed tar: entry '" + name + "' runs past the end of the archive");
        if (type == '0' || type == '\0') out.push_back({std::move(name), std::string(bytes.substr(pos, size))});
        pos += (size + kBlock - 1) / kBlock * kBlock;
    }
    return out;
}

const SampleFile* SampleRecord::find(std::string_view field) const {
    for (const auto& f : files) {
        if (f.field == field) return &f;
    }
    return nullptr;
}

const SampleFile& SampleRecord::at(std::string_view field) const {
    if (const auto* f = find(field)) return *f;
    throw DataError("sample '" + key + "' has no field '" + std::string(field) + "'");
}

bool valid_field_name(std::string_view field) {
    if (field.empty()) return false;
    return std::all_of(field.begin(), field.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-';
    });
}

bool valid_key(std::string_view key) {
    if (key.empty()) return false;
    return std::all_of(key.begin(), key.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    });
}

std::string write_shard(std::span<const SampleRecord> samples) {
    if (samples.empty()) throw DataError("a shard needs at least one sample");
    std::set<std::string_view> keys;
    std::vector<TarEntry> entries;
    for (const auto& s : samples) {
        if (!valid_key(s.key)) throw DataError("invalid sample key '" + s.key + "'");
        if (!keys.insert(s.key).second) throw DataError("duplicate sample key '" + s.key + "' in shard");
        if (s.files.empty()) throw DataError("sample '" + s.key + "' has no files");
        std::set<std::string_view> fields;
        for (const auto& f : s.files) {
            if (!valid_field_name(f.field))
                throw DataError("field name '" + f.field + "' of sample '" + s.key +
                                "' must be alphanumeric (no underscore or dot); rename it");
            if (!fields.insert(f.field).second)
                throw DataError("sample '" + s.key + "' repeats field '" + f.field + "'");
            std::string name = s.key + "_" + f.field;
            if (!f.ext.empty()) name += "." + f.ext;
            entries.push_back({std::move(name), f.bytes});
        }
    }
    return write_tar(entries);
}

std::vector<SampleRecord> read_shard(std::string_view bytes) {
    std::vector<SampleRecord> out;
    std::set<std::string> closed;
    for (auto& e : read_tar(bytes)) {
        auto slash = e.name.rfind('/');
        std::string_view base = e.name;
        if (slash != std::string::npos) base.remove_prefix(slash + 1);
        auto us = base.rfind('_');
        if (us == std::string::npos || us == 0 || us + 1 == base.size())
            throw FormatError("shard entry '" + e.name + "' is not named {key}_{field}.{ext}");
        std::string key(base.substr(0, us));
        std::string_view rest = base.substr(us + 1);
        auto dot = rest.find('.');
        SampleFile file{std::string(rest.substr(0, dot)), dot == std::string_view::npos ? "" : std::string(rest.substr(dot + 1)),
                        std::move(e.data)};
        if (out.empty() || out.back().key != key) {
            if (!out.empty()) closed.insert(out.back().key);
            if (closed.count(key)) throw FormatError("entries of sample '" + key + "' are not contiguous");
            out.push_back({key, {}});
        }
        out.back().files.push_back(std::move(file));
    }
    if (out.empty()) throw FormatError("shard contains no samples");
    return out;
}

std::string shard_id(std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%08llu", static_cast<unsigned long long>(id));
    return buf;
}

std::string shard_file_name(std::uint64_t id) { return "shard_" + shard_id(id) + ".tar"; }

namespace {

bool is_shard_id(std::string_view s) {
    return s.size() == 8 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

void check_entry(const ManifestEntry* prev, const ManifestEntry& e, std::size_t line) {
    if (!is_shard_id(e.shard)) throw ManifestError(line, "shard id '" + e.shard + "' is not 8 digits");
    if (e.num_sequences < 1) throw ManifestError(line, "num_sequences must be >= 1");
    if (prev && !(prev->shard < e.shard)) throw ManifestError(line, "shard id '" + e.shard + "' does not increase");
}

}  // namespace

void validate_manifest(std::span<const ManifestEntry> entries) {
    for (std::size_t i = 0; i < entries.size(); ++i) check_entry(i ? &entries[i - 1] : nullptr, entries[i], i + 1);
}

std::string write_manifest(std::span<const ManifestEntry> entries) {
    validate_manifest(entries);
    std::string out;
    for (const auto& e : entries)
        out += "{\"shard\": \"" + e.shard + "\", \"num_sequences\": " + std::to_string(e.num_sequences) + "}\n";
    return out;
}

std::vector<ManifestEntry> read_manifest(std::string_view text) {
    std::vector<ManifestEntry> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) throw ManifestError(line_no, "empty line");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ManifestError(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object() || j.size() != 2 || !j.contains("shard") || !j.contains("num_sequences"))
            throw ManifestError(line_no, "expected exactly the keys \"shard\" and \"num_sequences\"");
        if (!j["shard"].is_string()) throw ManifestError(line_no, "\"shard\" must be a string");
        if (!j["num_sequences"].is_number_unsigned())
            throw ManifestError(line_no, "\"num_sequences\" must be a non-negative integer");
        ManifestEntry e{j["shard"].get<std::string>(), j["num_sequences"].get<std::uint64_t>()};
        check_entry(out.empty() ? nullptr : &out.back(), e, line_no);
        out.push_back(std::move(e));
    }
    return out;
}

std::uint64_t total_sequences(std::span<const ManifestEntry> entries) {
    std::uint64_t n = 0;
    for (const auto& e : entries) n += e.num_sequences;
    return n;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

std::filesystem::path LocalStorage::resolve(const std::string& path) const {
    std::filesystem::path p(path);
    if (p.is_absolute()) throw Error("storage paths are relative: '" + path + "'");
    for (const auto& part : p) {
        if (part == "..") throw Error("storage path escapes its root: '" + path + "'");
    }
    return root_ / p;
}

std::string LocalStorage::read(const std::string& path) const { return read_file(resolve(path)); }

void LocalStorage::write(const std::string& path, std::string_view bytes) { write_file(resolve(path), bytes); }

bool LocalStorage::exists(const std::string& path) const { return std::filesystem::exists(resolve(path)); }

std::vector<std::string> LocalStorage::list(const std::string& dir) const {
    std::vector<std::string> out;
    auto p = resolve(dir);
    if (!std::filesystem::is_directory(p)) return out;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
        if (e.is_regular_file()) out.push_back(e.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace foundry::shardstore
