#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "colearn/data/volume.hpp"

namespace colearn::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

json read_header(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw data_error("cannot open " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw format_error(file.string() + ": " + e.what());
    }
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file);
    if (!out) throw data_error("cannot write " + file.string());
    out << text << '\n';
    if (!out) throw data_error("write failed: " + file.string());
}

dims3 header_dims(const json& h, const fs::path& file) {
    if (!h.contains("dims") || !h["dims"].is_array() || h["dims"].size() != 3) {
        throw format_error(file.string() + ": dims must be [D, H, W]");
    }
    std::array<std::size_t, 3> e{};
    for (std::size_t a = 0; a < 3; ++a) {
        const auto& v = h["dims"][a];
        if (!v.is_number_integer() || v.get<long long>() < 1) throw format_error(file.string() + ": dims must be positive integers");
        e[a] = v.get<std::size_t>();
    }
    return {e[0], e[1], e[2]};
}

void check_common(const json& h, const fs::path& file, const std::string& id, int channels) {
    if (!h.is_object()) throw format_error(file.string() + ": header must be an object");
    if (!h.contains("id") || !h["id"].is_string() || h["id"].get<std::string>() != id) {
        throw format_error(file.string() + ": id missing or different from file name");
    }
    if (!h.contains("channels") || !h["channels"].is_number_integer() || h["channels"].get<int>() != channels) {
        throw format_error(file.string() + ": expected channels = " + std::to_string(channels));
    }
    if (!h.contains("dtype") || h["dtype"] != "f32-le") throw format_error(file.string() + ": dtype must be \"f32-le\"");
}

std::vector<char> read_payload(const fs::path& file, std::size_t expected) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw data_error("cannot open " + file.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < expected) {
        throw truncated_error(file.string() + ": payload has " + std::to_string(bytes.size()) + " bytes, header promises " +
                              std::to_string(expected));
    }
    if (bytes.size() > expected) {
        throw size_mismatch_error(file.string() + ": payload has " + std::to_string(bytes.size()) + " bytes, header promises " +
                                  std::to_string(expected));
    }
    return bytes;
}

void write_payload(const fs::path& file, const std::vector<char>& bytes) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw data_error("cannot write " + file.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("write failed: " + file.string());
}

void append_floats(std::vector<char>& bytes, const std::vector<float>& values) {
    const auto* p = reinterpret_cast<const char*>(values.data());
    bytes.insert(bytes.end(), p, p + values.size() * sizeof(float));
}

} // namespace

void save_volume(const volume_sample& sample, const fs::path& dir) {
    validate(sample);
    fs::create_directories(dir);
    const dims3 d = sample.dims();
    json h = {{"id", sample.id},      {"dims", {d.d, d.h, d.w}}, {"channels", channel_count},
              {"dtype", "f32-le"},    {"label", sample.label},   {"augmented", sample.augmented}};
    std::vector<char> bytes;
    bytes.reserve(d.count() * (channel_count * sizeof(float) + 1));
    for (const auto& c : sample.channels) append_floats(bytes, c.values);
    for (auto m : sample.mask.values) bytes.push_back(static_cast<char>(m));
    write_text(dir / (sample.id + ".json"), h.dump(1));
    write_payload(dir / (sample.id + ".bin"), bytes);
}

volume_sample load_volume(const fs::path& dir, const std::string& id) {
    const fs::path header_file = dir / (id + ".json");
    const json h = read_header(header_file);
    check_common(h, header_file, id, static_cast<int>(channel_count));
    if (!h.contains("label") || !h["label"].is_number_integer() || (h["label"] != 0 && h["label"] != 1)) {
        throw format_error(header_file.string() + ": label must be 0 or 1");
    }
    const dims3 d = header_dims(h, header_file);
    const std::size_t n = d.count();
    const auto bytes = read_payload(dir / (id + ".bin"), n * (channel_count * sizeof(float) + 1));

    volume_sample s;
    s.id = id;
    s.label = h["label"].get<int>();
    s.augmented = h.value("augmented", false);
    const char* p = bytes.data();
    for (auto& c : s.channels) {
        c = float_grid(d);
        std::memcpy(c.values.data(), p, n * sizeof(float));
        p += n * sizeof(float);
    }
    s.mask = binary_grid(d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto m = static_cast<std::uint8_t>(p[i]);
        if (m > 1) throw format_error(id + ": mask bytes must be 0 or 1");
        s.mask.values[i] = m;
    }
    if (foreground_count(s.mask) == 0) throw mask_error(id + ": empty mask");
    if (component_count(s.mask) != 1) throw mask_error(id + ": mask is not one 6-connected component");
    try {
        validate(s);
    } catch (const std::invalid_argument& e) {
        throw format_error(e.what());
    }
    return s;
}

void save_scalar_volume(const std::string& id, const float_grid& values, const fs::path& dir) {
    if (values.values.size() != values.dims.count()) throw std::invalid_argument("save_scalar_volume: size mismatch");
    fs::create_directories(dir);
    const dims3 d = values.dims;
    json h = {{"id", id}, {"dims", {d.d, d.h, d.w}}, {"channels", 1}, {"dtype", "f32-le"}};
    std::vector<char> bytes;
    append_floats(bytes, values.values);
    write_text(dir / (id + ".json"), h.dump(1));
    write_payload(dir / (id + ".bin"), bytes);
}

float_grid load_scalar_volume(const fs::path& dir, const std::string& id) {
    const fs::path header_file = dir / (id + ".json");
    const json h = read_header(header_file);
    check_common(h, header_file, id, 1);
    const dims3 d = header_dims(h, header_file);
    const auto bytes = read_payload(dir / (id + ".bin"), d.count() * sizeof(float));
    float_grid g(d);
    std::memcpy(g.values.data(), bytes.data(), bytes.size());
    return g;
}

void save_manifest(const std::vector<manifest_entry>& entries, const fs::path& file) {
    json list = json::array();
    for (const auto& e : entries) list.push_back({{"id", e.id}, {"label", e.label}});
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    write_text(file, list.dump(1));
}

std::vector<manifest_entry> load_manifest(const fs::path& file) {
    const json list = read_header(file);
    if (!list.is_array()) throw format_error(file.string() + ": manifest must be a list");
    std::vector<manifest_entry> out;
    for (const auto& e : list) {
        if (!e.is_object() || !e.contains("id") || !e["id"].is_string() || !e.contains("label") ||
            !e["label"].is_number_integer() || (e["label"] != 0 && e["label"] != 1)) {
            throw format_error(file.string() + ": manifest entries need a string id and a 0/1 label");
        }
        out.push_back({e["id"].get<std::string>(), e["label"].get<int>()});
    }
    return out;
}

} // namespace colearn::data
