#include "colearn/model/config_io.hpp"

namespace colearn {

namespace config_detail {

void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw config_error(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || key == a;
        if (!known) throw config_error(where + ": unknown key \"" + key + "\"");
    }
}

namespace {

std::size_t as_count(const nlohmann::json& v, const std::string& what) {
    if (!v.is_number_integer() || v.get<long long>() < 0) throw config_error(what + ": expected a non-negative integer");
    return v.get<std::size_t>();
}

} // namespace

void read_count(const nlohmann::json& j, const char* key, std::size_t& out, const std::string& where) {
    if (j.contains(key)) out = as_count(j.at(key), where + "." + key);
}

void read_counts(const nlohmann::json& j, const char* key, std::vector<std::size_t>& out, const std::string& where) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array()) throw config_error(where + "." + key + ": expected a list");
    out.clear();
    for (const auto& e : v) out.push_back(as_count(e, where + "." + key));
}

} // namespace config_detail

namespace model {

using config_detail::read;
using config_detail::read_count;
using config_detail::read_counts;

nlohmann::json to_json(const cnn_config& c) {
    return {{"in_channels", c.in_channels}, {"widths", c.widths}, {"kernel", c.kernel}, {"stride", c.stride},
            {"padding", c.padding},         {"pool", c.pool},     {"fc", c.fc},         {"dropout", c.dropout},
            {"crop", c.crop}};
}

nlohmann::json to_json(const gnn_config& c) {
    return {{"radii", c.radii},       {"ratio", c.ratio}, {"widths", c.widths},   {"edge_hidden", c.edge_hidden},
            {"max_degree", c.max_degree}, {"fc", c.fc},   {"dropout", c.dropout}};
}

cnn_config cnn_from_json(const nlohmann::json& j, const std::string& where) {
    config_detail::require_keys(j, {"in_channels", "widths", "kernel", "stride", "padding", "pool", "fc", "dropout", "crop"}, where);
    cnn_config c;
    read_count(j, "in_channels", c.in_channels, where);
    read_counts(j, "widths", c.widths, where);
    read_count(j, "kernel", c.kernel, where);
    read_count(j, "stride", c.stride, where);
    read_count(j, "padding", c.padding, where);
    read_count(j, "pool", c.pool, where);
    read_counts(j, "fc", c.fc, where);
    read(j, "dropout", c.dropout, where);
    read_count(j, "crop", c.crop, where);
    try {
        validate(c);
    } catch (const std::invalid_argument& e) {
        throw config_error(where + ": " + e.what());
    }
    return c;
}

gnn_config gnn_from_json(const nlohmann::json& j, const std::string& where) {
    config_detail::require_keys(j, {"radii", "ratio", "widths", "edge_hidden", "max_degree", "fc", "dropout"}, where);
    gnn_config c;
    read(j, "radii", c.radii, where);
    read(j, "ratio", c.ratio, where);
    read_counts(j, "widths", c.widths, where);
    read_count(j, "edge_hidden", c.edge_hidden, where);
    read_count(j, "max_degree", c.max_degree, where);
    read_counts(j, "fc", c.fc, where);
    read(j, "dropout", c.dropout, where);
    try {
        validate(c);
    } catch (const std::invalid_argument& e) {
        throw config_error(where + ": " + e.what());
    }
    return c;
}

} // namespace model

} // namespace colearn
