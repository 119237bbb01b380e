#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "grid.hpp"

namespace heisenflag {

inline GridField read_hfld(const std::string& path) {
    detail::require_little_endian();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("hfld: cannot open for read: " + path);
    std::string header;
    if (!std::getline(is, header)) throw std::runtime_error("hfld: missing header: " + path);
    auto j = nlohmann::json::parse(header);
    if (j.at("version").get<int>() != 1) throw std::runtime_error("hfld: unsupported version");
    if (j.at("layout").get<std::string>() != "t-fastest")
        throw std::runtime_error("hfld: unsupported layout");
    GridSpec spec(j.at("nu").get<int>(), j.at("Z").get<double>(), j.at("T").get<double>(),
                  j.at("n_z").get<int>(), j.at("n_t").get<int>(), j.at("t_periodic").get<bool>());
    GridField f(spec);
    const std::string dtype = j.at("dtype").get<std::string>();
    if (dtype == "c128") {
        is.read(reinterpret_cast<char*>(f.values.data()),
                static_cast<std::streamsize>(f.values.size() * sizeof(cplx)));
    } else if (dtype == "f64") {
        std::vector<double> re(f.values.size());
        is.read(reinterpret_cast<char*>(re.data()),
                static_cast<std::streamsize>(re.size() * sizeof(double)));
        for (std::size_t i = 0; i < re.size(); ++i) f.values[i] = re[i];
    } else {
        throw std::runtime_error("hfld: unknown dtype " + dtype);
    }
    if (!is) throw std::runtime_error("hfld: truncated payload: " + path);
    return f;
}

}  // namespace heisenflag
