#include "perfkit/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>

namespace perfkit::io {

namespace {

template <typename T>
void put_le(std::string& out, T value)
{
    static_assert(sizeof(T) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    if constexpr (std::endian::native == std::endian::big)
        bits = __builtin_bswap32(bits);
    char buf[4];
    std::memcpy(buf, &bits, 4);
    out.append(buf, 4);
}

class Reader {
public:
    Reader(std::string bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

    template <typename T>
    T get()
    {
        static_assert(sizeof(T) == 4);
        if (pos_ + 4 > bytes_.size())
            throw FormatError(what_ + ": truncated header or payload");
        std::uint32_t bits;
        std::memcpy(&bits, bytes_.data() + pos_, 4);
        if constexpr (std::endian::native == std::endian::big)
            bits = __builtin_bswap32(bits);
        pos_ += 4;
        T value;
        std::memcpy(&value, &bits, 4);
        return value;
    }

    void expect_magic(std::string_view magic)
    {
        if (bytes_.size() < magic.size() || std::string_view(bytes_).substr(0, magic.size()) != magic)
            throw FormatError(what_ + ": bad magic, expected " + std::string(magic));
        pos_ = magic.size();
    }

    std::vector<float> payload(std::size_t count)
    {
        const std::size_t remaining = bytes_.size() - pos_;
        if (remaining != count * 4)
            throw FormatError(what_ + ": payload holds " + std::to_string(remaining / 4) + " floats, header implies " +
                              std::to_string(count));
        std::vector<float> out(count);
        for (auto& v : out) {
            v = get<float>();
            if (!std::isfinite(v))
                throw FormatError(what_ + ": payload contains a non-finite value");
        }
        return out;
    }

private:
    std::string bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v)
{
    if (v > 0xffffffffu)
        throw ValidationError("dimension too large for u32 header");
    return static_cast<std::uint32_t>(v);
}

double parse_double(std::string_view cell, std::size_t line)
{
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t'))
        cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
        cell.remove_suffix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v))
        throw FormatError("curve CSV line " + std::to_string(line) + ": non-numeric cell '" + std::string(cell) + "'");
    return v;
}

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_atomic(const fs::path& path, std::string_view bytes)
{
    const fs::path parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::error_code ec;
    if (!fs::is_directory(parent, ec))
        throw IoError("output directory does not exist: " + parent.string());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename into " + path.string());
    }
}

CtpVolume4D read_ctp4(const fs::path& path)
{
    Reader r(read_text(path), path.string());
    r.expect_magic("CTP4");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    const std::size_t t = r.get<std::uint32_t>();
    Dims3 d;
    d.z = r.get<std::uint32_t>();
    d.y = r.get<std::uint32_t>();
    d.x = r.get<std::uint32_t>();
    const float dt = r.get<float>();
    if (t == 0 || d.size() == 0)
        throw FormatError(path.string() + ": zero dimension in header");
    auto payload = r.payload(t * d.size());
    try {
        return CtpVolume4D(t, d, dt, std::move(payload));
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_ctp4(const fs::path& path, const CtpVolume4D& v)
{
    std::string out;
    out.reserve(28 + v.data().size() * 4);
    out.append("CTP4");
    put_le(out, kFormatVersion);
    put_le(out, checked_u32(v.frames()));
    put_le(out, checked_u32(v.dims().z));
    put_le(out, checked_u32(v.dims().y));
    put_le(out, checked_u32(v.dims().x));
    put_le(out, static_cast<float>(v.dt()));
    for (float f : v.data())
        put_le(out, f);
    write_atomic(path, out);
}

Volume3D read_vol3(const fs::path& path, Unit unit)
{
    Reader r(read_text(path), path.string());
    r.expect_magic("VOL3");
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    Dims3 d;
    d.z = r.get<std::uint32_t>();
    d.y = r.get<std::uint32_t>();
    d.x = r.get<std::uint32_t>();
    if (d.size() == 0)
        throw FormatError(path.string() + ": zero dimension in header");
    auto payload = r.payload(d.size());
    try {
        return Volume3D(d, std::vector<double>(payload.begin(), payload.end()), unit);
    } catch (const ValidationError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_vol3(const fs::path& path, const Volume3D& v)
{
    std::string out;
    out.reserve(20 + v.data().size() * 4);
    out.append("VOL3");
    put_le(out, kFormatVersion);
    put_le(out, checked_u32(v.dims().z));
    put_le(out, checked_u32(v.dims().y));
    put_le(out, checked_u32(v.dims().x));
    for (double d : v.data()) {
        const float f = static_cast<float>(d);
        if (!std::isfinite(f))
            throw ValidationError("value overflows f32 in " + path.string());
        put_le(out, f);
    }
    write_atomic(path, out);
}

Volume3D read_mask(const fs::path& path)
{
    return read_vol3(path, Unit::Binary);
}

void write_mask(const fs::path& path, const Volume3D& mask)
{
    for (double v : mask.data())
        if (v != 0.0 && v != 1.0)
            throw ValidationError("mask must be binary: " + path.string());
    write_vol3(path, mask);
}

VascularFunction parse_curve_csv(std::string_view text, CurveKind kind)
{
    std::vector<double> times;
    std::vector<double> values;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;
        if (!header_seen) {
            if (line.starts_with("\xEF\xBB\xBF"))
                line.remove_prefix(3);
            if (line != "t_seconds,value_hu")
                throw FormatError("curve CSV must start with header 't_seconds,value_hu'");
            header_seen = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
            throw FormatError("curve CSV line " + std::to_string(line_no) + ": expected two columns");
        times.push_back(parse_double(line.substr(0, comma), line_no));
        values.push_back(parse_double(line.substr(comma + 1), line_no));
    }
    if (values.size() < 2)
        throw FormatError("curve CSV needs at least 2 rows");
    const double dt = times[1] - times[0];
    if (!(dt > 0.0))
        throw FormatError("curve CSV times must be strictly increasing");
    for (std::size_t i = 1; i < times.size(); ++i) {
        const double step = times[i] - times[i - 1];
        if (std::abs(step - dt) > 1e-6 * dt)
            throw FormatError("curve CSV has non-uniform time spacing at row " + std::to_string(i + 1));
    }
    return VascularFunction(std::move(values), dt, kind);
}

std::string format_curve_csv(const VascularFunction& curve)
{
    std::string out = "t_seconds,value_hu\n";
    for (std::size_t i = 0; i < curve.size(); ++i) {
        out += format_double(static_cast<double>(i) * curve.dt());
        out += ',';
        out += format_double(curve[i]);
        out += '\n';
    }
    return out;
}

VascularFunction read_curve_csv(const fs::path& path, CurveKind kind)
{
    return parse_curve_csv(read_text(path), kind);
}

void write_curve_csv(const fs::path& path, const VascularFunction& curve)
{
    write_atomic(path, format_curve_csv(curve));
}

}  // namespace perfkit::io
