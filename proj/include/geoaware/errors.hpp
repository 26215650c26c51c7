#pragma once

#include <stdexcept>
#include <string>

namespace geoaware {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define GEOAWARE_DEFINE_ERROR(Name)              \
    class Name : public Error {                  \
    public:                                      \
        using Error::Error;                      \
    }

GEOAWARE_DEFINE_ERROR(DimensionError);
GEOAWARE_DEFINE_ERROR(NumericError);
GEOAWARE_DEFINE_ERROR(StateError);
GEOAWARE_DEFINE_ERROR(ConfigError);
GEOAWARE_DEFINE_ERROR(FormatError);
GEOAWARE_DEFINE_ERROR(InputError);
GEOAWARE_DEFINE_ERROR(CameraError);
GEOAWARE_DEFINE_ERROR(TaskError);
GEOAWARE_DEFINE_ERROR(GenerationError);
GEOAWARE_DEFINE_ERROR(VocabularyError);
GEOAWARE_DEFINE_ERROR(SchemaError);

#undef GEOAWARE_DEFINE_ERROR

} // namespace geoaware
