#include "micpq/error.hpp"

#include <fstream>

#include "micpq/detail/binary_io.hpp"

namespace micpq {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::NonContiguousClasses: return "NonContiguousClasses";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
        case ErrorCode::KNotPowerOfTwo: return "KNotPowerOfTwo";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::ZeroNorm: return "ZeroNorm";
        case ErrorCode::TooLargeToEnumerate: return "TooLargeToEnumerate";
        case ErrorCode::RowNotNormalized: return "RowNotNormalized";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::EmptyIndex: return "EmptyIndex";
        case ErrorCode::ConfigMismatch: return "ConfigMismatch";
        case ErrorCode::KNot2: return "KNot2";
        case ErrorCode::UnknownDocId: return "UnknownDocId";
        case ErrorCode::TooFewPoints: return "TooFewPoints";
    }
    return "Unknown";
}

namespace detail {

void ByteWriter::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for '" + path.string() + "'");
}

ByteReader ByteReader::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for '" + path.string() + "'");
    return ByteReader(std::move(bytes));
}

}  // namespace detail
}  // namespace micpq
