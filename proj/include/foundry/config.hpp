#pragma once

// Layered configuration: schema defaults < included YAML < preset YAML < CLI.
//
// A schema declares every dotted key-path with a type tag. YAML files may pull
// in other files with a reserved `include` key; sibling keys of `include`
// override the included values by deep merge. Command-line overrides have the
// form `dotted.path=value` and are parsed against the schema's type tag.
// The result of resolve() is frozen.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "foundry/error.hpp"

namespace foundry::config {

enum class TypeTag { integer, floating, string, boolean, list, nested };

// Ordered by precedence; a higher enumerator wins.
enum class Source { default_value = 0, include = 1, preset = 2, cli = 3 };

std::string_view to_string(TypeTag tag);
std::string_view to_string(Source source);

class Value;
using List = std::vector<Value>;
using Map = std::map<std::string, Value, std::less<>>;

// Typed leaves (int/float/bool/string) appear only at schema keys. Inside list
// and nested values every scalar is kept as its YAML text.
class Value {
public:
    using Storage = std::variant<std::int64_t, double, bool, std::string, List, Map>;

    Value() : v_(Map{}) {}
    Value(std::int64_t v) : v_(v) {}
    Value(int v) : v_(std::int64_t{v}) {}
    Value(double v) : v_(v) {}
    Value(bool v) : v_(v) {}
    Value(std::string v) : v_(std::move(v)) {}
    Value(const char* v) : v_(std::string(v)) {}
    Value(List v) : v_(std::move(v)) {}
    Value(Map v) : v_(std::move(v)) {}

    const Storage& storage() const { return v_; }

    bool is_int() const { return std::holds_alternative<std::int64_t>(v_); }
    bool is_float() const { return std::holds_alternative<double>(v_); }
    bool is_bool() const { return std::holds_alternative<bool>(v_); }
    bool is_string() const { return std::holds_alternative<std::string>(v_); }
    bool is_list() const { return std::holds_alternative<List>(v_); }
    bool is_map() const { return std::holds_alternative<Map>(v_); }

    std::int64_t as_int() const;
    double as_float() const;
    bool as_bool() const;
    const std::string& as_string() const;
    const List& as_list() const;
    const Map& as_map() const;
    List& as_list();
    Map& as_map();

    bool matches(TypeTag tag) const;

    friend bool operator==(const Value&, const Value&) = default;

private:
    Storage v_;
};

struct SchemaEntry {
    TypeTag type;
    std::optional<Value> default_value;
    bool required = false;
};

class ConfigSchema {
public:
    // Throws ConfigError when the path collides with an existing leaf or
    // interior path, or when the default does not match the tag.
    ConfigSchema& add(std::string path, TypeTag type, std::optional<Value> default_value = std::nullopt,
                      bool required = false);

    const SchemaEntry* find(std::string_view path) const;
    // True when some declared key lives strictly below `path`.
    bool is_interior(std::string_view path) const;
    // The declared `nested` key that strictly contains `path`, if any.
    std::optional<std::string> nested_owner(std::string_view path) const;

    const std::map<std::string, SchemaEntry, std::less<>>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

private:
    std::map<std::string, SchemaEntry, std::less<>> entries_;
};

// A YAML document with every `include` expanded. Leaves are YAML text.
struct RawTree {
    Map root;
    // Dotted leaf path -> include or preset. Lists count as leaves.
    std::map<std::string, Source, std::less<>> sources;
};

// Loads `path` and resolves includes depth-first. Relative include paths are
// tried against the including file's directory, then the working directory.
RawTree load_tree(const std::filesystem::path& path);

// Same as load_tree for an in-memory document; includes resolve against
// `base_dir`.
RawTree parse_tree(std::string_view yaml_text, const std::filesystem::path& base_dir = {});

class FrozenConfigError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class ResolvedConfig {
public:
    const Value& at(std::string_view path) const;
    bool contains(std::string_view path) const;
    Source provenance(std::string_view path) const;

    std::int64_t get_int(std::string_view path) const { return at(path).as_int(); }
    double get_float(std::string_view path) const { return at(path).as_float(); }
    bool get_bool(std::string_view path) const { return at(path).as_bool(); }
    const std::string& get_string(std::string_view path) const { return at(path).as_string(); }
    std::vector<std::string> get_strings(std::string_view path) const;
    std::vector<double> get_floats(std::string_view path) const;
    std::vector<std::int64_t> get_ints(std::string_view path) const;

    const std::map<std::string, Value, std::less<>>& values() const { return values_; }
    const std::map<std::string, Source, std::less<>>& provenance() const { return provenance_; }

    bool frozen() const { return frozen_; }
    // Always throws FrozenConfigError on a resolved config.
    void set(std::string_view path, Value value, Source source = Source::cli);

    friend bool operator==(const ResolvedConfig&, const ResolvedConfig&) = default;

private:
    friend ResolvedConfig resolve(const ConfigSchema&, const RawTree*, std::span<const std::string>);

    std::map<std::string, Value, std::less<>> values_;
    std::map<std::string, Source, std::less<>> provenance_;
    bool frozen_ = false;
};

// `cli` entries look like "dotted.path=value"; a leading "--" is ignored.
ResolvedConfig resolve(const ConfigSchema& schema, const RawTree* preset, std::span<const std::string> cli);

inline ResolvedConfig resolve(const ConfigSchema& schema, const RawTree* preset = nullptr,
                              const std::vector<std::string>& cli = {}) {
    return resolve(schema, preset, std::span<const std::string>(cli));
}

// Deterministic YAML with keys sorted at every level. Loading the output as a
// preset reproduces the same values.
std::string emit_resolved(const ResolvedConfig& config);

// Scalar text parsing used for CLI values and YAML leaves.
Value parse_scalar(std::string_view text, TypeTag tag);
std::string format_float(double v);

}  // namespace foundry::config
