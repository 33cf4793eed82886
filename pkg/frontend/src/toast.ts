// Nonblocking notice; never interrupts the feed.

export function showToast(message: string, ttlMs = 4000): HTMLElement {
  const toast = document.createElement("div");
  toast.className = "feedlab-toast";
  toast.setAttribute("role", "status");
  toast.textContent = message;
  document.body.appendChild(toast);
  setTimeout(() => toast.remove(), ttlMs);
  return toast;
}
