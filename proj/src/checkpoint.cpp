#include "ainet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace ainet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; byte swapping is not implemented");

namespace fs = std::filesystem;
using nlohmann::json;

static std::string bin_name(const std::string& param_name) {
    std::string out = param_name;
    for (char& c : out)
        if (c == '/' || c == '\\') c = '_';
    return out + ".bin";
}

void save_checkpoint(const ParamStore& store, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    check(!ec, "cannot create checkpoint directory " + dir + ": " + ec.message());

    json manifest = json::array();
    for (const auto& p : store.entries()) {
        manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"dtype", "f64"}});
        const std::string path = (fs::path(dir) / bin_name(p.name)).string();
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        check(f.good(), "cannot open " + path + " for writing");
        f.write(reinterpret_cast<const char*>(p.tensor.ptr()),
                static_cast<std::streamsize>(p.tensor.numel() * sizeof(double)));
        check(f.good(), "write failed: " + path);
    }
    const std::string mpath = (fs::path(dir) / "manifest.json").string();
    std::ofstream mf(mpath, std::ios::trunc);
    check(mf.good(), "cannot open " + mpath + " for writing");
    mf << manifest.dump(2) << "\n";
    check(mf.good(), "write failed: " + mpath);
}

void load_checkpoint(ParamStore& store, const std::string& dir) {
    const std::string mpath = (fs::path(dir) / "manifest.json").string();
    std::ifstream mf(mpath);
    check(mf.good(), "cannot open checkpoint manifest " + mpath);
    json manifest = json::parse(mf);
    check(manifest.is_array(), "manifest must be a JSON array");
    check(manifest.size() == store.size(),
          "checkpoint has " + std::to_string(manifest.size()) + " parameters, model expects " +
              std::to_string(store.size()));

    for (const auto& entry : manifest) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        const std::string dtype = entry.at("dtype").get<std::string>();
        check(dtype == "f64", "unsupported dtype '" + dtype + "' for " + name);
        check(store.has(name), "checkpoint parameter not in model: " + name);
        Tensor t = store.get(name);
        check(t.shape() == shape, "shape mismatch for " + name + ": checkpoint " +
                                      shape_str(shape) + ", model " + shape_str(t.shape()));

        const std::string path = (fs::path(dir) / bin_name(name)).string();
        std::ifstream f(path, std::ios::binary);
        check(f.good(), "cannot open " + path);
        f.read(reinterpret_cast<char*>(t.ptr()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
        check(f.gcount() == static_cast<std::streamsize>(t.numel() * sizeof(double)),
              "short read: " + path);
    }
}

}  // namespace ainet
