#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include <json.hpp>

#include "foundry/preprocess.hpp"

namespace foundry::shardstore {

namespace fs = std::filesystem;

std::vector<windowing::Episode> Converter::read_episodes() const {
    std::vector<windowing::Episode> out;
    for (const auto& id : list_episodes()) out.push_back(read_episode(id));
    return out;
}

std::vector<windowing::Sample> Converter::emit_samples(const windowing::Episode& ep, const SampleEncoding& enc) const {
    auto samples = windowing::enumerate_samples(ep, enc.window);
    for (auto& s : samples) add_relative_fields(s, ep, enc.window, enc.pose_groups);
    return samples;
}

void ConverterRegistry::register_converter(const std::string& name, ConverterFactory factory) {
    if (name.empty()) throw Error("converter name must be nonempty");
    if (!factory) throw Error("converter '" + name + "' has no factory");
    if (!factories_.emplace(name, std::move(factory)).second)
        throw Error("converter '" + name + "' is already registered");
}

std::unique_ptr<Converter> ConverterRegistry::create(const std::string& name, const ConverterParams& params) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) {
        std::string known;
        for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
        throw Error("unknown converter '" + name + "'; registered: [" + known + "]");
    }
    return it->second(params);
}

std::vector<std::string> ConverterRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [n, f] : factories_) out.push_back(n);
    return out;
}

ConverterRegistry& ConverterRegistry::global() {
    static ConverterRegistry registry = [] {
        ConverterRegistry r;
        register_builtin_converters(r);
        return r;
    }();
    return registry;
}

void register_builtin_converters(ConverterRegistry& registry) {
    registry.register_converter("generic_episode", make_generic_episode_converter);
    registry.register_converter("csv_episode", make_csv_episode_converter);
}

namespace {

std::string frame_name(std::size_t t, const std::string& ext) {
    std::string n = std::to_string(t);
    return std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n + "." + ext;
}

void check_episode_id(const std::string& id) {
    if (!valid_key(id)) throw DataError("episode id '" + id + "' may only use letters, digits, '-' and '_'");
}

class GenericEpisodeConverter : public Converter {
public:
    explicit GenericEpisodeConverter(fs::path root) : root_(std::move(root)) {
        if (!fs::is_directory(root_)) throw Error("input directory '" + root_.string() + "' does not exist");
    }

    std::vector<std::string> list_episodes() const override {
        std::vector<std::string> ids;
        for (const auto& e : fs::directory_iterator(root_)) {
            if (e.is_directory() && fs::exists(e.path() / "episode.json")) ids.push_back(e.path().filename().string());
        }
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    std::vector<std::string> discover_cameras() const override {
        std::set<std::string> cams;
        for (const auto& id : list_episodes()) {
            for (const auto& e : fs::directory_iterator(root_ / id)) {
                if (e.is_directory()) cams.insert(e.path().filename().string());
            }
        }
        return {cams.begin(), cams.end()};
    }

    windowing::Episode read_episode(const std::string& id) const override {
        check_episode_id(id);
        const fs::path dir = root_ / id;
        windowing::Episode ep;
        ep.id = id;
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(read_file(dir / "episode.json"));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("episode.json: " + std::string(e.what()));
        }
        if (!meta.is_object()) throw FormatError("episode.json must hold an object");
        if (meta.contains("task")) {
            if (!meta["task"].is_string()) throw FormatError("episode.json: \"task\" must be a string");
            ep.task = meta["task"].get<std::string>();
        }
        std::vector<fs::path> entries;
        for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
        std::sort(entries.begin(), entries.end());
        for (const auto& p : entries) {
            if (fs::is_regular_file(p) && p.extension() == ".bin") {
                ep.lowdim.emplace(p.stem().string(), decode_matrix(read_file(p)));
            } else if (fs::is_directory(p)) {
                windowing::ImageStream stream;
                std::vector<fs::path> frames;
                for (const auto& f : fs::directory_iterator(p)) {
                    if (f.is_regular_file()) frames.push_back(f.path());
                }
                std::sort(frames.begin(), frames.end());
                for (std::size_t t = 0; t < frames.size(); ++t) {
                    std::string ext = frames[t].extension().string();
                    if (!ext.empty()) ext.erase(0, 1);
                    if (t == 0) stream.ext = ext;
                    if (frames[t].filename() != frame_name(t, stream.ext))
                        throw FormatError("camera '" + p.filename().string() + "': expected frame " +
                                          frame_name(t, stream.ext) + ", found " + frames[t].filename().string());
                    stream.frames.push_back(read_file(frames[t]));
                }
                ep.images.emplace(p.filename().string(), std::move(stream));
            }
        }
        if (ep.lowdim.empty()) throw FormatError("no numeric .bin fields");
        ep.validate();
        return ep;
    }

private:
    fs::path root_;
};

std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        auto comma = line.find(',', pos);
        std::string_view cell = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.remove_suffix(1);
        out.emplace_back(cell);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

class CsvEpisodeConverter : public Converter {
public:
    explicit CsvEpisodeConverter(fs::path root) : root_(std::move(root)) {
        if (!fs::is_directory(root_)) throw Error("input directory '" + root_.string() + "' does not exist");
    }

    std::vector<std::string> list_episodes() const override {
        std::vector<std::string> ids;
        for (const auto& e : fs::directory_iterator(root_)) {
            if (e.is_regular_file() && e.path().extension() == ".csv") ids.push_back(e.path().stem().string());
        }
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    std::vector<std::string> discover_cameras() const override { return {}; }

    windowing::Episode read_episode(const std::string& id) const override {
        check_episode_id(id);
        std::istringstream in(read_file(root_ / (id + ".csv")));
        windowing::Episode ep;
        ep.id = id;
        std::string line;
        std::size_t line_no = 0;
        auto next_line = [&]() -> bool {
            if (!std::getline(in, line)) return false;
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return true;
        };
        if (!next_line()) throw FormatError("empty csv");
        if (line.rfind("# task:", 0) == 0) {
            std::string_view task = std::string_view(line).substr(7);
            if (!task.empty() && task.front() == ' ') task.remove_prefix(1);
            ep.task = std::string(task);
            if (!next_line()) throw FormatError("csv has no header row");
        }

        // Column -> (field, index). Fields keep first-appearance order.
        std::vector<std::string> field_order;
        std::map<std::string, std::size_t> widths;
        std::vector<std::pair<std::string, std::size_t>> columns;
        for (const auto& col : split_csv(line)) {
            std::string field = col;
            std::size_t idx = 0;
            if (auto br = col.find('['); br != std::string::npos) {
                if (col.back() != ']') throw FormatError("line " + std::to_string(line_no) + ": bad column '" + col + "'");
                field = col.substr(0, br);
                std::string_view num(col.data() + br + 1, col.size() - br - 2);
                auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), idx);
                if (ec != std::errc() || p != num.data() + num.size())
                    throw FormatError("line " + std::to_string(line_no) + ": bad column '" + col + "'");
            }
            if (field.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty column name");
            auto& w = widths[field];
            if (w == 0) field_order.push_back(field);
            if (idx != w)
                throw FormatError("line " + std::to_string(line_no) + ": column '" + col + "' out of order");
            ++w;
            columns.emplace_back(field, idx);
        }

        std::vector<std::vector<double>> rows;
        while (next_line()) {
            if (line.empty()) continue;
            auto cells = split_csv(line);
            if (cells.size() != columns.size())
                throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(columns.size()) +
                                  " values, found " + std::to_string(cells.size()));
            std::vector<double> row(cells.size());
            for (std::size_t c = 0; c < cells.size(); ++c) {
                const auto& cell = cells[c];
                auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), row[c]);
                if (ec != std::errc() || p != cell.data() + cell.size() || cell.empty())
                    throw FormatError("line " + std::to_string(line_no) + ": '" + cell + "' is not a number");
            }
            rows.push_back(std::move(row));
        }
        if (rows.empty()) throw FormatError("csv has no data rows");
        for (const auto& f : field_order)
            ep.lowdim.emplace(f, RowMatrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(widths[f])));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < columns.size(); ++c)
                ep.lowdim[columns[c].first](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(columns[c].second)) =
                    rows[r][c];
        }
        ep.validate();
        return ep;
    }

private:
    fs::path root_;
};

}  // namespace

std::unique_ptr<Converter> make_generic_episode_converter(const ConverterParams& params) {
    return std::make_unique<GenericEpisodeConverter>(params.input);
}

std::unique_ptr<Converter> make_csv_episode_converter(const ConverterParams& params) {
    return std::make_unique<CsvEpisodeConverter>(params.input);
}

void write_generic_episode(const fs::path& root, const windowing::Episode& ep) {
    check_episode_id(ep.id);
    const fs::path dir = root / ep.id;
    fs::create_directories(dir);
    write_file(dir / "episode.json", nlohmann::json{{"task", ep.task}}.dump() + "\n");
    for (const auto& [name, m] : ep.lowdim) write_file(dir / (name + ".bin"), encode_matrix(m));
    for (const auto& [cam, stream] : ep.images) {
        for (std::size_t t = 0; t < stream.frames.size(); ++t)
            write_file(dir / cam / frame_name(t, stream.ext), stream.frames[t]);
    }
}

void write_csv_episode(const fs::path& root, const windowing::Episode& ep) {
    check_episode_id(ep.id);
    if (ep.task.find('\n') != std::string::npos) throw DataError("csv task text cannot contain a newline");
    std::string out;
    if (!ep.task.empty()) out += "# task: " + ep.task + "\n";
    std::string header;
    for (const auto& [name, m] : ep.lowdim) {
        for (Eigen::Index d = 0; d < m.cols(); ++d) header += (header.empty() ? "" : ",") + name + "[" + std::to_string(d) + "]";
    }
    out += header + "\n";
    for (std::size_t t = 0; t < ep.length(); ++t) {
        std::string row;
        for (const auto& [name, m] : ep.lowdim) {
            for (Eigen::Index d = 0; d < m.cols(); ++d)
                row += (row.empty() ? "" : ",") + format_double(m(static_cast<Eigen::Index>(t), d));
        }
        out += row + "\n";
    }
    write_file(root / (ep.id + ".csv"), out);
}

}  // namespace foundry::shardstore
