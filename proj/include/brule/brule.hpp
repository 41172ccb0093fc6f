#ifndef BRULE_BRULE_HPP
#define BRULE_BRULE_HPP

// Everything in one include.

#include "brule/core.hpp"
#include "brule/io.hpp"
#include "brule/image_io.hpp"
#include "brule/parallel.hpp"
#include "brule/transport.hpp"
#include "brule/barycenter.hpp"
#include "brule/heatmap.hpp"
#include "brule/deform.hpp"
#include "brule/regularizers.hpp"
#include "brule/sandbox.hpp"
#include "brule/serialize.hpp"

#endif  // BRULE_BRULE_HPP
