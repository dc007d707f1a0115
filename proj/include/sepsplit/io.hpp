#pragma once

// Artifact output: CSV and JSON files, SHA-256 content hashes, the run manifest,
// and JSON (de)serialization of cylinder functions. Requires OpenSSL (libcrypto).

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "cylinder.hpp"

namespace sepsplit {

using json = nlohmann::json;

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

inline std::string sha256_hex(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
        throw IoError("sha256: digest computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read '" + p.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Rows of numbers formatted with 17 significant digits.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void add(const std::vector<double>& row) {
        require(row.size() == columns_.size(), "CsvTable: row has " + std::to_string(row.size()) + " values, expected " +
                                                   std::to_string(columns_.size()));
        rows_.push_back(row);
    }
    [[nodiscard]] std::size_t rows() const { return rows_.size(); }

    [[nodiscard]] std::string str() const {
        std::string out;
        for (std::size_t i = 0; i < columns_.size(); ++i) out += (i ? "," : "") + columns_[i];
        out += '\n';
        for (const auto& r : rows_) {
            for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + format_double(r[i]);
            out += '\n';
        }
        return out;
    }

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<double>> rows_;
};

/// Writes artifacts into one directory and remembers their hashes for the manifest.
class ArtifactWriter {
public:
    explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw IoError("cannot create output directory '" + dir_.string() + "': " + ec.message());
    }

    [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

    void write(const std::string& name, const std::string& content) {
        auto path = dir_ / name;
        {
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write '" + path.string() + "'");
            out << content;
            if (!out) throw IoError("write failed for '" + path.string() + "'");
        }
        files_.push_back({name, sha256_hex(content), content.size()});
    }
    void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
    void write_csv(const std::string& name, const CsvTable& t) { write(name, t.str()); }

    [[nodiscard]] json file_list() const {
        json a = json::array();
        for (const auto& f : files_) a.push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
        return a;
    }

private:
    struct Entry {
        std::string name, sha256;
        std::size_t bytes;
    };
    std::filesystem::path dir_;
    std::vector<Entry> files_;
};

// cylinder functions --------------------------------------------------------

inline json complex_json(complex z) { return json::array({z.real(), z.imag()}); }

inline complex complex_from(const json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw IoError("expected a complex number as [re, im]");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline json to_json(const SGrid& g) { return {{"T", g.T()}, {"panels", g.panels()}, {"order", g.order()}}; }

inline json to_json(const CylinderFunction& f) {
    json entries = json::array();
    for (const auto& [key, d] : f.entries()) {
        json e = {{"c", key.c}, {"alpha", key.alpha}, {"k", key.k}, {"wedge", complex_json(d.wedge)},
                  {"mean", complex_json(d.mean)}};
        json tail = json::array();
        for (complex z : d.tail) tail.push_back(complex_json(z));
        e["tail"] = tail;
        entries.push_back(e);
    }
    return {{"format", "sepsplit.cylinder/1"},
            {"grid", to_json(f.grid())},
            {"n", f.n()},
            {"m", f.m()},
            {"components", f.components()},
            {"wedge_class", f.wedge_class()},
            {"entries", entries}};
}

inline CylinderFunction cylinder_from_json(const json& j) {
    try {
        if (j.at("format") != "sepsplit.cylinder/1") throw IoError("unsupported cylinder format");
        const json& g = j.at("grid");
        auto grid = std::make_shared<SGrid>(g.at("T").get<double>(), g.at("panels").get<int>(), g.at("order").get<int>());
        CylinderFunction f(grid, j.at("n").get<int>(), j.at("m").get<int>(), j.at("components").get<int>(),
                           j.at("wedge_class").get<bool>());
        for (const auto& e : j.at("entries")) {
            ModeKey key{e.at("c").get<int>(), e.at("alpha").get<Lattice>(), e.at("k").get<Lattice>()};
            auto& d = f.at(key);
            d.wedge = complex_from(e.at("wedge"));
            d.mean = complex_from(e.at("mean"));
            std::vector<complex> tail;
            for (const auto& z : e.at("tail")) tail.push_back(complex_from(z));
            f.set_tail(key, std::move(tail));
        }
        return f;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed cylinder function: ") + e.what());
    } catch (const PreconditionError& e) {
        throw IoError(std::string("malformed cylinder function: ") + e.what());
    }
}

} // namespace sepsplit
