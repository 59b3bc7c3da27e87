#pragma once

#include "glmperm/error.hpp"
#include "glmperm/rng.hpp"
#include "glmperm/parallel.hpp"
#include "glmperm/numerics.hpp"
#include "glmperm/design.hpp"
#include "glmperm/glm.hpp"
#include "glmperm/impute.hpp"
#include "glmperm/transform.hpp"
#include "glmperm/infer.hpp"
#include "glmperm/outlier.hpp"
#include "glmperm/sim.hpp"
#include "glmperm/io.hpp"
#include "glmperm/pipeline.hpp"
