# カメラモデル（ピンホール投影とカメラ配置のサンプリング）
from .model import Camera, Projection, camera_angles, look_at, project, sample_camera, world_to_cam
from .schemas import CameraDistribution, CameraIntrinsics, Factor, load_camera_distribution
