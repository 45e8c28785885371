#include "foundry/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace foundry::config {

namespace fs = std::filesystem;

std::string_view to_string(TypeTag tag) {
    switch (tag) {
        case TypeTag::integer: return "int";
        case TypeTag::floating: return "float";
        case TypeTag::string: return "string";
        case TypeTag::boolean: return "bool";
        case TypeTag::list: return "list";
        case TypeTag::nested: return "nested";
    }
    return "?";
}

std::string_view to_string(Source source) {
    switch (source) {
        case Source::default_value: return "default";
        case Source::include: return "include";
        case Source::preset: return "preset";
        case Source::cli: return "cli";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Value

namespace {

template <class T>
const T& get_or_throw(const Value::Storage& s, std::string_view want) {
    if (const T* p = std::get_if<T>(&s)) return *p;
    throw ConfigError("config value is not a " + std::string(want));
}

bool starts_with_path(std::string_view path, std::string_view prefix) {
    return path.size() > prefix.size() && path.starts_with(prefix) && path[prefix.size()] == '.';
}

std::string join_path(std::string_view prefix, std::string_view key) {
    if (prefix.empty()) return std::string(key);
    std::string out(prefix);
    out += '.';
    out += key;
    return out;
}

}  // namespace

std::int64_t Value::as_int() const { return get_or_throw<std::int64_t>(v_, "int"); }
double Value::as_float() const { return get_or_throw<double>(v_, "float"); }
bool Value::as_bool() const { return get_or_throw<bool>(v_, "bool"); }
const std::string& Value::as_string() const { return get_or_throw<std::string>(v_, "string"); }
const List& Value::as_list() const { return get_or_throw<List>(v_, "list"); }
const Map& Value::as_map() const { return get_or_throw<Map>(v_, "mapping"); }
List& Value::as_list() { return const_cast<List&>(std::as_const(*this).as_list()); }
Map& Value::as_map() { return const_cast<Map&>(std::as_const(*this).as_map()); }

bool Value::matches(TypeTag tag) const {
    switch (tag) {
        case TypeTag::integer: return is_int();
        case TypeTag::floating: return is_float();
        case TypeTag::string: return is_string();
        case TypeTag::boolean: return is_bool();
        case TypeTag::list: return is_list();
        case TypeTag::nested: return is_map();
    }
    return false;
}

// ---------------------------------------------------------------------------
// Schema

ConfigSchema& ConfigSchema::add(std::string path, TypeTag type, std::optional<Value> default_value, bool required) {
    if (path.empty() || path.front() == '.' || path.back() == '.' || path.find("..") != std::string::npos)
        throw ConfigError("invalid schema key-path '" + path + "'");
    if (entries_.contains(path)) throw ConfigError("duplicate schema key-path '" + path + "'");
    for (const auto& [existing, _] : entries_) {
        if (starts_with_path(existing, path) || starts_with_path(path, existing))
            throw ConfigError("schema key-path '" + path + "' collides with '" + existing + "'");
    }
    if (default_value && !default_value->matches(type))
        throw ConfigError("default for '" + path + "' does not match type " + std::string(to_string(type)));
    entries_.emplace(std::move(path), SchemaEntry{type, std::move(default_value), required});
    return *this;
}

const SchemaEntry* ConfigSchema::find(std::string_view path) const {
    auto it = entries_.find(path);
    return it == entries_.end() ? nullptr : &it->second;
}

bool ConfigSchema::is_interior(std::string_view path) const {
    std::string prefix = std::string(path) + ".";
    auto it = entries_.lower_bound(prefix);
    return it != entries_.end() && std::string_view(it->first).starts_with(prefix);
}

std::optional<std::string> ConfigSchema::nested_owner(std::string_view path) const {
    for (std::size_t dot = path.find('.'); dot != std::string_view::npos; dot = path.find('.', dot + 1)) {
        auto prefix = path.substr(0, dot);
        if (const auto* e = find(prefix); e && e->type == TypeTag::nested) return std::string(prefix);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Scalar parsing

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

[[noreturn]] void mismatch(std::string_view text, TypeTag tag) {
    throw ConfigError("cannot parse '" + std::string(text) + "' as " + std::string(to_string(tag)));
}

Value yaml_to_value(const YAML::Node& node);

}  // namespace

Value parse_scalar(std::string_view raw, TypeTag tag) {
    std::string text = trim(raw);
    switch (tag) {
        case TypeTag::integer: {
            std::string_view s = text;
            if (s.starts_with('+')) s.remove_prefix(1);
            std::int64_t v = 0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) mismatch(raw, tag);
            return Value(v);
        }
        case TypeTag::floating: {
            std::string l = lower(text);
            if (l == ".inf" || l == "+.inf") return Value(std::numeric_limits<double>::infinity());
            if (l == "-.inf") return Value(-std::numeric_limits<double>::infinity());
            if (l == ".nan") return Value(std::numeric_limits<double>::quiet_NaN());
            std::string_view s = text;
            if (s.starts_with('+')) s.remove_prefix(1);
            double v = 0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) mismatch(raw, tag);
            return Value(v);
        }
        case TypeTag::boolean: {
            std::string l = lower(text);
            if (l == "true" || l == "yes" || l == "on" || l == "1") return Value(true);
            if (l == "false" || l == "no" || l == "off" || l == "0") return Value(false);
            mismatch(raw, tag);
        }
        case TypeTag::string:
            // Unlike the numeric tags, strings keep their surrounding whitespace.
            return Value(std::string(raw));
        case TypeTag::list:
        case TypeTag::nested: {
            YAML::Node node;
            try {
                node = YAML::Load(std::string(raw));
            } catch (const YAML::Exception& e) {
                throw ConfigError("cannot parse '" + std::string(raw) + "' as " + std::string(to_string(tag)) +
                                  ": " + e.what());
            }
            if (tag == TypeTag::list && node.IsSequence()) return yaml_to_value(node);
            if (tag == TypeTag::nested && node.IsMap()) return yaml_to_value(node);
            mismatch(raw, tag);
        }
    }
    mismatch(raw, tag);
}

std::string format_float(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, ptr);
    // Keep a float-looking form so human readers (and other YAML tools) do not
    // read the value as an integer.
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

// ---------------------------------------------------------------------------
// YAML loading with includes

namespace {

Value yaml_to_value(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Map: {
            Map m;
            for (const auto& kv : node) {
                auto key = kv.first.Scalar();
                if (m.contains(key)) throw ConfigError("duplicate key '" + key + "'");
                m.emplace(std::move(key), yaml_to_value(kv.second));
            }
            return Value(std::move(m));
        }
        case YAML::NodeType::Sequence: {
            List l;
            for (const auto& item : node) l.push_back(yaml_to_value(item));
            return Value(std::move(l));
        }
        case YAML::NodeType::Scalar: return Value(node.Scalar());
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined: return Value(std::string("~"));
    }
    return Value(std::string("~"));
}

using SourceMap = std::map<std::string, Source, std::less<>>;

void erase_subtree(SourceMap& sources, std::string_view path) {
    std::erase_if(sources, [&](const auto& kv) { return kv.first == path || starts_with_path(kv.first, path); });
}

void mark_leaves(const Value& v, const std::string& path, Source source, SourceMap& out) {
    if (v.is_map()) {
        for (const auto& [k, child] : v.as_map()) mark_leaves(child, join_path(path, k), source, out);
    } else {
        out[path] = source;
    }
}

// Deep merge `over` into `base`: mappings merge recursively, everything else
// replaces. `over_sources` are keyed relative to `prefix`'s root.
void deep_merge(Map& base, SourceMap& base_sources, const Map& over, const SourceMap& over_sources,
                const std::string& prefix) {
    for (const auto& [k, v] : over) {
        std::string path = join_path(prefix, k);
        auto it = base.find(k);
        if (it != base.end() && it->second.is_map() && v.is_map()) {
            deep_merge(it->second.as_map(), base_sources, v.as_map(), over_sources, path);
            continue;
        }
        erase_subtree(base_sources, path);
        for (auto s = over_sources.lower_bound(path); s != over_sources.end(); ++s) {
            if (s->first != path && !starts_with_path(s->first, path)) break;
            base_sources[s->first] = s->second;
        }
        base.insert_or_assign(k, v);
    }
}

class IncludeResolver {
public:
    RawTree load_root(const fs::path& path) {
        auto canon = canonical_or_throw(path, {});
        return RawTree{load_file(canon, Source::preset, ""), std::move(sources_)};
    }

    RawTree load_text(std::string_view text, const fs::path& base_dir) {
        YAML::Node node = parse_yaml(std::string(text), "<memory>");
        Map root = expand(node, base_dir.empty() ? fs::current_path() : base_dir, Source::preset, "");
        return RawTree{std::move(root), std::move(sources_)};
    }

private:
    static YAML::Node parse_yaml(const std::string& text, const std::string& origin) {
        YAML::Node node;
        try {
            node = YAML::Load(text);
        } catch (const YAML::Exception& e) {
            throw ConfigError("failed to parse " + origin + ": " + e.what());
        }
        if (node.IsNull()) return YAML::Node(YAML::NodeType::Map);
        if (!node.IsMap()) throw ConfigError(origin + ": document root must be a mapping");
        return node;
    }

    fs::path canonical_or_throw(const fs::path& path, const fs::path& including_dir) {
        std::vector<fs::path> candidates;
        if (path.is_absolute()) {
            candidates.push_back(path);
        } else {
            if (!including_dir.empty()) candidates.push_back(including_dir / path);
            candidates.push_back(fs::current_path() / path);
        }
        for (const auto& c : candidates) {
            std::error_code ec;
            if (fs::is_regular_file(c, ec)) return fs::canonical(c);
        }
        throw ConfigError("config file not found: " + path.string());
    }

    Map load_file(const fs::path& canon, Source level, const std::string& prefix) {
        if (std::find(stack_.begin(), stack_.end(), canon) != stack_.end()) {
            std::string chain;
            auto first = std::find(stack_.begin(), stack_.end(), canon);
            for (auto it = first; it != stack_.end(); ++it) chain += it->filename().string() + " -> ";
            chain += canon.filename().string();
            throw ConfigError("include cycle: " + chain);
        }
        std::ifstream in(canon);
        if (!in) throw ConfigError("cannot open config file: " + canon.string());
        std::stringstream ss;
        ss << in.rdbuf();
        YAML::Node node = parse_yaml(ss.str(), canon.string());
        stack_.push_back(canon);
        Map out = expand(node, canon.parent_path(), level, prefix);
        stack_.pop_back();
        return out;
    }

    // Expands a mapping node. `level` is the source of keys written directly in
    // the current file.
    Map expand(const YAML::Node& node, const fs::path& dir, Source level, const std::string& prefix) {
        Map base;
        if (auto inc = node["include"]; inc) {
            if (!inc.IsScalar()) throw ConfigError("'include' must be a single file path at '" + prefix + "'");
            auto target = canonical_or_throw(inc.Scalar(), dir);
            base = load_file(target, Source::include, prefix);
        }
        Map own;
        SourceMap own_sources;
        for (const auto& kv : node) {
            const auto key = kv.first.Scalar();
            if (key == "include") continue;
            if (own.contains(key)) throw ConfigError("duplicate key '" + join_path(prefix, key) + "'");
            std::string path = join_path(prefix, key);
            if (kv.second.IsMap()) {
                SourceMap saved = std::move(sources_);
                sources_.clear();
                Map child = expand(kv.second, dir, level, path);
                for (auto& s : sources_) own_sources.insert(s);
                sources_ = std::move(saved);
                own.emplace(key, Value(std::move(child)));
            } else {
                Value v = yaml_to_value(kv.second);
                mark_leaves(v, path, level, own_sources);
                own.emplace(key, std::move(v));
            }
        }
        deep_merge(base, sources_, own, own_sources, prefix);
        return base;
    }

    std::vector<fs::path> stack_;
    SourceMap sources_;
};

}  // namespace

RawTree load_tree(const fs::path& path) { return IncludeResolver{}.load_root(path); }

RawTree parse_tree(std::string_view yaml_text, const fs::path& base_dir) {
    return IncludeResolver{}.load_text(yaml_text, base_dir);
}

// ---------------------------------------------------------------------------
// ResolvedConfig

const Value& ResolvedConfig::at(std::string_view path) const {
    auto it = values_.find(path);
    if (it == values_.end()) throw ConfigError("config key '" + std::string(path) + "' is not set");
    return it->second;
}

bool ResolvedConfig::contains(std::string_view path) const { return values_.contains(path); }

Source ResolvedConfig::provenance(std::string_view path) const {
    auto it = provenance_.find(path);
    if (it == provenance_.end()) throw ConfigError("config key '" + std::string(path) + "' is not set");
    return it->second;
}

namespace {

template <class T>
std::vector<T> list_as(const ResolvedConfig& c, std::string_view path, TypeTag tag) {
    std::vector<T> out;
    for (const auto& item : c.at(path).as_list()) {
        if (!item.is_string()) throw ConfigError("list '" + std::string(path) + "' holds a non-scalar element");
        Value v = parse_scalar(item.as_string(), tag);
        out.push_back(std::get<T>(v.storage()));
    }
    return out;
}

}  // namespace

std::vector<std::string> ResolvedConfig::get_strings(std::string_view path) const {
    return list_as<std::string>(*this, path, TypeTag::string);
}
std::vector<double> ResolvedConfig::get_floats(std::string_view path) const {
    return list_as<double>(*this, path, TypeTag::floating);
}
std::vector<std::int64_t> ResolvedConfig::get_ints(std::string_view path) const {
    return list_as<std::int64_t>(*this, path, TypeTag::integer);
}

void ResolvedConfig::set(std::string_view path, Value value, Source source) {
    if (frozen_) throw FrozenConfigError("config is frozen; cannot set '" + std::string(path) + "'");
    values_.insert_or_assign(std::string(path), std::move(value));
    provenance_.insert_or_assign(std::string(path), source);
}

// ---------------------------------------------------------------------------
// resolve

namespace {

Source max_source_under(const SourceMap& sources, std::string_view path) {
    Source best = Source::default_value;
    for (auto it = sources.lower_bound(path); it != sources.end(); ++it) {
        if (it->first != path && !starts_with_path(it->first, path)) break;
        best = std::max(best, it->second);
    }
    return best;
}

// Typed conversion of a tree leaf against a schema entry.
Value coerce(const Value& raw, const SchemaEntry& entry, const std::string& path) {
    switch (entry.type) {
        case TypeTag::list:
            if (!raw.is_list()) throw ConfigError("'" + path + "' expects a list");
            return raw;
        case TypeTag::nested:
            if (!raw.is_map()) throw ConfigError("'" + path + "' expects a mapping");
            return raw;
        default:
            if (!raw.is_string()) throw ConfigError("'" + path + "' expects a " + std::string(to_string(entry.type)));
            try {
                return parse_scalar(raw.as_string(), entry.type);
            } catch (const ConfigError& e) {
                throw ConfigError("'" + path + "': " + e.what());
            }
    }
}

void merge_into_nested(Value& target, const Map& over) {
    if (!target.is_map()) target = Value(Map{});
    SourceMap scratch;
    deep_merge(target.as_map(), scratch, over, {}, "");
}

void set_in_nested(Value& target, std::string_view subpath, Value leaf) {
    if (!target.is_map()) target = Value(Map{});
    Map* m = &target.as_map();
    for (;;) {
        auto dot = subpath.find('.');
        std::string key(subpath.substr(0, dot));
        if (dot == std::string_view::npos) {
            m->insert_or_assign(key, std::move(leaf));
            return;
        }
        auto it = m->find(key);
        if (it == m->end() || !it->second.is_map()) it = m->insert_or_assign(key, Value(Map{})).first;
        m = &it->second.as_map();
        subpath.remove_prefix(dot + 1);
    }
}

struct Resolver {
    const ConfigSchema& schema;
    std::map<std::string, Value, std::less<>> values;
    std::map<std::string, Source, std::less<>> provenance;

    void apply_tree(const Map& tree, const SourceMap& sources, const std::string& prefix) {
        for (const auto& [k, v] : tree) {
            std::string path = join_path(prefix, k);
            if (const auto* entry = schema.find(path)) {
                Source src = max_source_under(sources, path);
                if (src == Source::default_value) src = Source::preset;
                if (entry->type == TypeTag::nested) {
                    if (!v.is_map()) throw ConfigError("'" + path + "' expects a mapping");
                    merge_into_nested(values[path], v.as_map());
                } else {
                    values.insert_or_assign(path, coerce(v, *entry, path));
                }
                provenance[path] = src;
            } else if (schema.is_interior(path) && v.is_map()) {
                apply_tree(v.as_map(), sources, path);
            } else {
                throw ConfigError("unknown config key '" + path + "'");
            }
        }
    }

    void apply_cli(std::string_view arg) {
        if (arg.starts_with("--")) arg.remove_prefix(2);
        auto eq = arg.find('=');
        if (eq == std::string_view::npos || eq == 0)
            throw ConfigError("override '" + std::string(arg) + "' is not of the form path=value");
        std::string path(arg.substr(0, eq));
        std::string_view text = arg.substr(eq + 1);
        if (const auto* entry = schema.find(path)) {
            Value v;
            try {
                v = parse_scalar(text, entry->type);
            } catch (const ConfigError& e) {
                throw ConfigError("'" + path + "': " + e.what());
            }
            if (entry->type == TypeTag::nested) {
                merge_into_nested(values[path], v.as_map());
            } else {
                values.insert_or_assign(path, std::move(v));
            }
            provenance[path] = Source::cli;
        } else if (auto owner = schema.nested_owner(path)) {
            set_in_nested(values[*owner], std::string_view(path).substr(owner->size() + 1), Value(std::string(text)));
            provenance[*owner] = Source::cli;
        } else {
            throw ConfigError("unknown config key '" + path + "'");
        }
    }
};

}  // namespace

ResolvedConfig resolve(const ConfigSchema& schema, const RawTree* preset, std::span<const std::string> cli) {
    Resolver r{schema, {}, {}};
    for (const auto& [path, entry] : schema.entries()) {
        if (entry.default_value) {
            r.values.emplace(path, *entry.default_value);
            r.provenance.emplace(path, Source::default_value);
        }
    }
    if (preset) r.apply_tree(preset->root, preset->sources, "");
    for (const auto& arg : cli) r.apply_cli(arg);

    for (const auto& [path, entry] : schema.entries()) {
        if (entry.required && !r.values.contains(path))
            throw ConfigError("required config key '" + path + "' has no value");
    }

    ResolvedConfig out;
    out.values_ = std::move(r.values);
    out.provenance_ = std::move(r.provenance);
    out.frozen_ = true;
    return out;
}

// ---------------------------------------------------------------------------
// emit

namespace {

void emit_value(YAML::Emitter& e, const Value& v) {
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::int64_t>) {
                e << std::to_string(x);
            } else if constexpr (std::is_same_v<T, double>) {
                e << format_float(x);
            } else if constexpr (std::is_same_v<T, bool>) {
                e << (x ? "true" : "false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                e << x;
            } else if constexpr (std::is_same_v<T, List>) {
                e << YAML::BeginSeq;
                for (const auto& item : x) emit_value(e, item);
                e << YAML::EndSeq;
            } else {
                e << YAML::BeginMap;
                for (const auto& [k, child] : x) {
                    e << YAML::Key << k << YAML::Value;
                    emit_value(e, child);
                }
                e << YAML::EndMap;
            }
        },
        v.storage());
}

// Schema strings are typed, so they are always quoted; this keeps "true" or
// "12" from looking like another type to a reader.
struct Node {
    std::map<std::string, Node> children;
    const Value* leaf = nullptr;
    bool quote = false;
};

void emit_node(YAML::Emitter& e, const Node& n) {
    e << YAML::BeginMap;
    for (const auto& [k, child] : n.children) {
        e << YAML::Key << k << YAML::Value;
        if (child.leaf) {
            if (child.quote) {
                e << YAML::DoubleQuoted << child.leaf->as_string();
            } else {
                emit_value(e, *child.leaf);
            }
        } else {
            emit_node(e, child);
        }
    }
    e << YAML::EndMap;
}

}  // namespace

std::string emit_resolved(const ResolvedConfig& config) {
    Node root;
    for (const auto& [path, value] : config.values()) {
        Node* n = &root;
        std::string_view rest = path;
        for (;;) {
            auto dot = rest.find('.');
            n = &n->children[std::string(rest.substr(0, dot))];
            if (dot == std::string_view::npos) break;
            rest.remove_prefix(dot + 1);
        }
        n->leaf = &value;
        n->quote = value.is_string();
    }
    YAML::Emitter e;
    emit_node(e, root);
    std::string out = e.c_str();
    out += '\n';
    return out;
}

}  // namespace foundry::config
