/** Point-cloud rendering: hardware point primitives with orbit controls.
 * 2048-point clouds render as a single BufferGeometry, no level-of-detail. */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";

import { colorBuffer } from "./colors.js";

export class CloudView {
  private scene: THREE.Scene;
  private camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private controls: OrbitControls;
  private points: THREE.Points | null = null;

  constructor(private container: HTMLElement) {
    const width = container.clientWidth || 320;
    const height = container.clientHeight || 320;
    this.scene = new THREE.Scene();
    this.scene.background = new THREE.Color(0x14161a);
    this.camera = new THREE.PerspectiveCamera(50, width / height, 0.01, 50);
    this.camera.position.set(1.6, 1.2, 1.6);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(width, height);
    container.appendChild(this.renderer.domElement);
    this.controls = new OrbitControls(this.camera, this.renderer.domElement);
    this.controls.enableDamping = true;
    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  show(points: number[][], labels: number[]): void {
    if (this.points) {
      this.scene.remove(this.points);
      this.points.geometry.dispose();
      (this.points.material as THREE.Material).dispose();
    }
    const positions = new Float32Array(points.length * 3);
    points.forEach((p, i) => {
      positions[i * 3] = p[0];
      positions[i * 3 + 1] = p[2]; // z-up data, y-up camera
      positions[i * 3 + 2] = p[1];
    });
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(positions, 3));
    geometry.setAttribute("color", new THREE.BufferAttribute(colorBuffer(labels), 3));
    const material = new THREE.PointsMaterial({ size: 0.035, vertexColors: true });
    this.points = new THREE.Points(geometry, material);
    this.scene.add(this.points);
  }
}
