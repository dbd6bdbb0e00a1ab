#pragma once

#include "trafficrect/error.hpp"
#include "trafficrect/geometry.hpp"
#include "trafficrect/rng.hpp"
#include "trafficrect/quantile.hpp"
#include "trafficrect/time.hpp"
#include "trafficrect/image.hpp"
#include "trafficrect/ortho.hpp"
#include "trafficrect/correspond.hpp"
#include "trafficrect/homography.hpp"
#include "trafficrect/robust.hpp"
#include "trafficrect/tracks.hpp"
#include "trafficrect/braking.hpp"
#include "trafficrect/analytics.hpp"
#include "trafficrect/store.hpp"
#include "trafficrect/site.hpp"
#include "trafficrect/pipeline.hpp"
#include "trafficrect/config.hpp"
#include "trafficrect/http_transport.hpp"
#include "trafficrect/service.hpp"
