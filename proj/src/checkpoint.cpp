#include "pdnet/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace pdnet {

namespace {

using nlohmann::json;

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (sizeof(T) == 4)
        return "f32";
    else
        return "f64";
}

std::string payload_name(const std::string& prefix) {
    const auto slash = prefix.find_last_of('/');
    return (slash == std::string::npos ? prefix : prefix.substr(slash + 1)) + ".bin";
}

json read_manifest(const std::string& prefix) {
    std::ifstream in(prefix + ".json");
    if (!in) throw std::runtime_error("checkpoint: cannot open " + prefix + ".json");
    json m;
    in >> m;
    return m;
}

}  // namespace

template <typename T>
void save_checkpoint(const ParamSet<T>& params, const std::string& prefix,
                     const std::string& meta_json) {
    json manifest;
    if (!meta_json.empty()) manifest["meta"] = json::parse(meta_json);
    manifest["format"] = "pdnet-checkpoint-v1";
    manifest["dtype"] = dtype_name<T>();
    manifest["byte_order"] = "little";
    manifest["payload"] = payload_name(prefix);
    json items = json::array();
    std::int64_t offset = 0;
    for (const auto& [name, t] : params) {
        json e;
        e["name"] = name;
        e["shape"] = t->shape;
        e["offset"] = offset;
        e["count"] = t->numel();
        items.push_back(std::move(e));
        offset += t->numel();
    }
    manifest["params"] = std::move(items);

    {
        std::ofstream out(prefix + ".json");
        if (!out) throw std::runtime_error("checkpoint: cannot write " + prefix + ".json");
        out << manifest.dump(2) << "\n";
    }
    {
        std::ofstream out(prefix + ".bin", std::ios::binary);
        if (!out) throw std::runtime_error("checkpoint: cannot write " + prefix + ".bin");
        for (const auto& [name, t] : params)
            out.write(reinterpret_cast<const char*>(t->data.data()),
                      static_cast<std::streamsize>(t->data.size() * sizeof(T)));
    }
}

template <typename T>
ParamSet<T> load_checkpoint(const std::string& prefix) {
    const json manifest = read_manifest(prefix);
    if (manifest.value("dtype", "") != dtype_name<T>())
        throw std::runtime_error("checkpoint: dtype mismatch (file has " +
                                 manifest.value("dtype", std::string("?")) + ")");
    const auto slash = prefix.find_last_of('/');
    const std::string dir = slash == std::string::npos ? "" : prefix.substr(0, slash + 1);
    const std::string payload = dir + manifest.at("payload").get<std::string>();
    std::ifstream in(payload, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open payload " + payload);

    ParamSet<T> params;
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<std::int64_t> shape = e.at("shape").get<std::vector<std::int64_t>>();
        const std::int64_t count = e.at("count").get<std::int64_t>();
        auto t = make_tensor<T>(shape, true);
        if (t->numel() != count) throw std::runtime_error("checkpoint: count/shape mismatch");
        in.seekg(e.at("offset").get<std::int64_t>() * static_cast<std::int64_t>(sizeof(T)));
        in.read(reinterpret_cast<char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(T)));
        if (!in) throw std::runtime_error("checkpoint: truncated payload " + payload);
        params.add(name, t);
    }
    return params;
}

std::string checkpoint_dtype(const std::string& prefix) {
    return read_manifest(prefix).value("dtype", "");
}

std::string checkpoint_meta(const std::string& prefix) {
    const json m = read_manifest(prefix);
    return m.contains("meta") ? m["meta"].dump() : std::string("{}");
}

template void save_checkpoint<float>(const ParamSet<float>&, const std::string&,
                                     const std::string&);
template void save_checkpoint<double>(const ParamSet<double>&, const std::string&,
                                      const std::string&);
template ParamSet<float> load_checkpoint<float>(const std::string&);
template ParamSet<double> load_checkpoint<double>(const std::string&);

}  // namespace pdnet
