# シーン形状とレイキャストによる遮蔽ラベル付け
from .raycast import (
    Box, Capsule, OcclusionLabel, Primitive, RayHit, Sphere,
    body_capsules, classify_joint, label_frame, load_scene, ray_cast, save_scene,
)
from .schemas import BodyRadii
