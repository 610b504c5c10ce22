#include "milsurv/errors.hpp"

namespace milsurv {

ParseError::ParseError(const std::string& msg, std::size_t row, std::string column)
    : Error(msg), row_(row), column_(std::move(column)) {}

FormatError::FormatError(const std::string& msg, std::size_t offset)
    : Error(msg + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

FoldDegeneracyError::FoldDegeneracyError(const std::string& msg, int fold)
    : Error(msg), fold_(fold) {}

}  // namespace milsurv
