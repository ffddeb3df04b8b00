#include "atome/matrix_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "atome/error.hpp"

namespace atome {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                   static_cast<char>((v >> 16) & 0xff),
                                   static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void write_atmx(std::ostream& out, const Matrix& m) {
    if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX) throw InputError("matrix too large for ATMX");
    out.write(kAtmxMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    put_u32(out, 0);
    std::vector<char> buf(m.size() * 4);
    const auto data = m.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(data[i]);
        buf[4 * i + 0] = static_cast<char>(bits & 0xff);
        buf[4 * i + 1] = static_cast<char>((bits >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<char>((bits >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<char>((bits >> 24) & 0xff);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("ATMX write failed");
}

Matrix read_atmx(std::istream& in) {
    std::array<unsigned char, kAtmxHeaderBytes> header{};
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() != static_cast<std::streamsize>(header.size())) {
        throw FormatError("ATMX header: expected 16 bytes, got " + std::to_string(in.gcount()));
    }
    if (std::memcmp(header.data(), kAtmxMagic, 4) != 0) throw FormatError("ATMX header: bad magic");
    const std::uint32_t rows = get_u32(header.data() + 4);
    const std::uint32_t cols = get_u32(header.data() + 8);
    const std::uint32_t reserved = get_u32(header.data() + 12);
    if (reserved != 0) {
        throw FormatError("ATMX header: reserved field must be 0, got " + std::to_string(reserved));
    }
    const std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    std::vector<unsigned char> buf(count * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::uint64_t>(in.gcount()) != buf.size()) {
        throw FormatError("ATMX payload: rows=" + std::to_string(rows) + " cols=" +
                          std::to_string(cols) + " needs " + std::to_string(buf.size()) +
                          " bytes, got " + std::to_string(in.gcount()));
    }
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<float>(get_u32(buf.data() + 4 * i));
    }
    Matrix m(rows, cols, std::move(data));
    if (!m.all_finite()) throw FormatError("ATMX payload: non-finite value");
    return m;
}

void write_atmx(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path.string());
    write_atmx(out, m);
}

Matrix read_atmx(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open: " + path.string());
    try {
        return read_atmx(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

KeyValues parse_key_values(std::istream& in, const std::string& source) {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw FormatError(source + ":" + std::to_string(lineno) + ": expected key=value");
        }
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open: " + path.string());
    return parse_key_values(in, path.string());
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path.string());
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

}  // namespace atome
