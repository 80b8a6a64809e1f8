#ifndef COLEARN_MODEL_CONFIG_IO_HPP
#define COLEARN_MODEL_CONFIG_IO_HPP

#include <stdexcept>

#include <json.hpp>

#include "colearn/model/model.hpp"

namespace colearn {

/// Schema violation in a JSON configuration: unknown key, wrong type or an
/// out-of-range value.
class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace model {

nlohmann::json to_json(const cnn_config& c);
nlohmann::json to_json(const gnn_config& c);

/// Missing keys keep their defaults; unknown keys and bad types throw
/// config_error. `where` prefixes messages ("cnn", "gnn", ...).
cnn_config cnn_from_json(const nlohmann::json& j, const std::string& where = "cnn");
gnn_config gnn_from_json(const nlohmann::json& j, const std::string& where = "gnn");

} // namespace model

namespace config_detail {

/// Rejects keys of `j` outside `allowed`.
void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw config_error(where + "." + key + ": wrong type");
    }
}

/// Integer fields reject negative and fractional numbers, which get<> would
/// silently convert.
void read_count(const nlohmann::json& j, const char* key, std::size_t& out, const std::string& where);
void read_counts(const nlohmann::json& j, const char* key, std::vector<std::size_t>& out, const std::string& where);

} // namespace config_detail

} // namespace colearn

#endif // COLEARN_MODEL_CONFIG_IO_HPP
